//! File-backed stages. Every stage writes its outputs under the output
//! directory; the `*_from_files` variants read their inputs back from it, so
//! chaining subcommands matches a single `pipeline` run byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use hierseg::evalkit::{ablation_run, evaluate, format_table, instance_accuracy, AblationArm, MetricsReport};
use hierseg::fusion::WeightedObservation;
use hierseg::io::{
    read_cameras, read_labels, read_observations, write_cameras, write_json, write_labels, write_observations,
    write_ply, write_posteriors, write_rendered, Catalogs, GroundTruth, PlyFormat, ScenePackage,
};
use hierseg::model::SegmentationResult;
use hierseg::pipeline::{
    cloud_spacing, plan_part_views, refine_groups, run_fusion, run_instance_parts, run_instances, run_pipeline,
    sort_observations, splat_radius, top_camera, FusedLabels, InstancePlan, MaskSource, OracleMasks, PackageMasks,
    PipelineConfig, TOP_VIEW_ID,
};
use hierseg::projection::MaskSet;
use hierseg::renderer::render;
use hierseg::synth::{catalogs, generate_scene_with};
use hierseg::{Camera, Cloud, Error, Rendered, Result};
use log::info;
use serde::{Deserialize, Serialize};

const INSTANCES: &str = "instances.json";
const CAMERAS: &str = "cameras.json";
const OBSERVATIONS: &str = "observations.json";
const POSTERIORS: &str = "posteriors.bin";
const LABELS: &str = "labels.json";
const SEGMENTATION: &str = "segmentation.ply";
const METRICS: &str = "metrics.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstancesFile {
    instance_id: Vec<u32>,
}

#[derive(Serialize)]
struct Metrics<'a> {
    parts: &'a MetricsReport,
    instance_accuracy: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    scene: String,
    oracle_masks: bool,
    points: usize,
    config: &'a PipelineConfig,
}

pub struct Context {
    package: ScenePackage<f64>,
    out: PathBuf,
    config: PipelineConfig,
    oracle: bool,
    spacing: f64,
}

fn write_view(out: &Path, rendered: &Rendered, masks: Option<&MaskSet>, catalogs: &Catalogs, top: bool) -> Result<()> {
    let views = out.join("views");
    fs::create_dir_all(&views).map_err(|e| Error::from(e).at_path(&views))?;
    write_rendered(&views, rendered)?;
    if let Some(m) = masks {
        let catalog = if top { &catalogs.instance } else { &catalogs.part };
        ScenePackage::<f64>::write_view_masks(out, m, catalog)?;
    }
    Ok(())
}

impl Context {
    pub fn open(scene: &Path, out: &Path, config: PipelineConfig, oracle: bool) -> Result<Self> {
        let package = ScenePackage::<f64>::read(scene)?;
        if oracle && package.ground_truth.is_none() {
            return Err(Error::InvalidConfig(
                "--oracle-masks needs gt_labels.json in the scene".into(),
            ));
        }
        let spacing = cloud_spacing(&package.cloud).ok_or(Error::TooFewPoints {
            needed: 2,
            got: package.cloud.len(),
        })?;
        info!("scene: {} points, median spacing {spacing:.5}", package.cloud.len());
        Ok(Self {
            package,
            out: out.to_path_buf(),
            config,
            oracle,
            spacing,
        })
    }

    fn cloud(&self) -> &Cloud {
        &self.package.cloud
    }

    fn with_source<R>(&self, f: impl FnOnce(&dyn MaskSource<f64>) -> Result<R>) -> Result<R> {
        if self.oracle {
            let gt = self.package.ground_truth.as_ref().expect("checked when opened");
            f(&OracleMasks {
                gt,
                catalogs: &self.package.catalogs,
                corruption: self.config.corruption,
            })
        } else {
            f(&PackageMasks { package: &self.package })
        }
    }

    fn top(&self) -> Result<Camera> {
        top_camera(self.cloud(), &self.package.cameras, &self.config)
    }

    pub fn render(&self) -> Result<()> {
        let top = self.top()?;
        let radius = splat_radius(self.cloud(), self.spacing, &self.config)?;
        let rendered = render(self.cloud(), &top, radius, &self.config.render);
        write_view(&self.out, &rendered, None, &self.package.catalogs, true)
    }

    pub fn instances(&self) -> Result<(Vec<u32>, Vec<InstancePlan<f64>>)> {
        let top = self.top()?;
        let stage = self.with_source(|src| run_instances(self.cloud(), &top, self.spacing, &self.config, src))?;
        write_view(
            &self.out,
            &stage.rendered,
            stage.masks.as_ref(),
            &self.package.catalogs,
            true,
        )?;
        let plans = plan_part_views(self.cloud(), &stage.instance_ids, &self.package.cameras, &self.config)?;
        let mut cameras = vec![top];
        cameras.extend(plans.iter().flat_map(|p| p.views.iter().cloned()));
        write_cameras(self.out.join(CAMERAS), &cameras)?;
        write_json(
            self.out.join(INSTANCES),
            &InstancesFile {
                instance_id: stage.instance_ids.clone(),
            },
        )?;
        info!("instances: {} assigned", plans.len());
        Ok((stage.instance_ids, plans))
    }

    fn read_instances(&self) -> Result<Vec<u32>> {
        let path = self.out.join(INSTANCES);
        let text = fs::read_to_string(&path).map_err(|e| Error::from(e).at_path(&path))?;
        let file: InstancesFile =
            serde_json::from_str(&text).map_err(|e| Error::SchemaError(e.to_string()).at_path(&path))?;
        if file.instance_id.len() != self.cloud().len() {
            return Err(Error::SizeMismatch(self.cloud().len(), file.instance_id.len()).at_path(path));
        }
        Ok(file.instance_id)
    }

    pub fn parts(&self, plans: &[InstancePlan<f64>]) -> Result<Vec<WeightedObservation>> {
        let mut observations = Vec::new();
        for plan in plans {
            let views =
                self.with_source(|src| run_instance_parts(self.cloud(), plan, self.spacing, &self.config, src))?;
            for v in views {
                write_view(&self.out, &v.rendered, v.masks.as_ref(), &self.package.catalogs, false)?;
                observations.extend(v.observations);
            }
        }
        sort_observations(&mut observations);
        write_observations(self.out.join(OBSERVATIONS), &observations)?;
        info!("parts: {} observations", observations.len());
        Ok(observations)
    }

    pub fn parts_from_files(&self) -> Result<Vec<WeightedObservation>> {
        let ids = self.read_instances()?;
        let known: Vec<Camera> = read_cameras(self.out.join(CAMERAS))?;
        let plans = plan_part_views(self.cloud(), &ids, &known, &self.config)?;
        self.parts(&plans)
    }

    pub fn fuse(&self, instance_ids: &[u32], observations: &[WeightedObservation]) -> Result<FusedLabels> {
        let fused = run_fusion(
            self.cloud(),
            instance_ids,
            observations,
            &self.package.catalogs.part,
            self.spacing,
            &self.config,
        )?;
        write_posteriors(self.out.join(POSTERIORS), &fused.posteriors)?;
        write_labels(self.out.join(LABELS), &fused.segmentation, true)?;
        write_ply(
            self.out.join(SEGMENTATION),
            self.cloud(),
            Some(&fused.segmentation),
            PlyFormat::BinaryLittleEndian,
        )?;
        let labeled = fused.segmentation.class_ids().filter(|&c| c > 0).count();
        info!("fuse: {labeled} of {} points labeled", self.cloud().len());
        Ok(fused)
    }

    pub fn fuse_from_files(&self) -> Result<FusedLabels> {
        let ids = self.read_instances()?;
        let observations = read_observations(self.out.join(OBSERVATIONS))?;
        self.fuse(&ids, &observations)
    }

    fn ground_truth(&self) -> Result<&GroundTruth> {
        self.package
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("scene has no gt_labels.json".into()))
    }

    pub fn eval(&self, segmentation: &SegmentationResult) -> Result<()> {
        let gt = self.ground_truth()?;
        let report = evaluate(segmentation, &gt.labels, &self.package.catalogs.part)?;
        let pred_inst: Vec<u32> = segmentation.instance_ids().collect();
        let gt_inst: Vec<u32> = gt.labels.instance_ids().collect();
        let metrics = Metrics {
            parts: &report,
            instance_accuracy: instance_accuracy(&pred_inst, &gt_inst)?,
        };
        write_json(self.out.join(METRICS), &metrics)?;
        let table = format_table(&[("Pipeline", &report)]);
        fs::write(self.out.join("metrics.txt"), &table)?;
        info!(
            "eval: mIoU {:.4}, instance accuracy {:.4}",
            report.miou, metrics.instance_accuracy
        );
        Ok(())
    }

    pub fn eval_from_files(&self) -> Result<()> {
        let labels = read_labels(self.out.join(LABELS))?;
        if labels.len() != self.cloud().len() {
            return Err(Error::SizeMismatch(self.cloud().len(), labels.len()));
        }
        self.eval(&labels)
    }

    pub fn pipeline(&self) -> Result<()> {
        let (ids, plans) = self.instances()?;
        let observations = self.parts(&plans)?;
        let fused = self.fuse(&ids, &observations)?;
        if self.package.ground_truth.is_some() {
            self.eval(&fused.segmentation)?;
        }
        Ok(())
    }

    pub fn ablate(&self) -> Result<()> {
        let gt = self.ground_truth()?;
        let (ids, plans) = self.instances()?;
        let observations = self.parts(&plans)?;
        let groups = refine_groups(self.cloud(), &ids, &self.config.fusion, self.spacing);
        let report = ablation_run(
            self.cloud(),
            &gt.labels,
            &observations,
            &self.package.catalogs.part,
            &self.config.fusion,
            &groups,
        )?;
        write_json(self.out.join("ablation.json"), &report)?;
        let columns: Vec<(&str, &MetricsReport)> =
            AblationArm::ALL.iter().map(|a| (a.label(), &report.arms[a])).collect();
        fs::write(self.out.join("ablation.txt"), format_table(&columns))?;
        for arm in AblationArm::ALL {
            info!("ablate: {} mIoU {:.4}", arm.label(), report.miou(arm));
        }
        Ok(())
    }

    pub fn write_manifest(&self, command: &str) -> Result<()> {
        write_json(
            self.out.join("manifest.json"),
            &Manifest {
                command,
                version: env!("CARGO_PKG_VERSION"),
                scene: self.package.root.display().to_string(),
                oracle_masks: self.oracle,
                points: self.cloud().len(),
                config: &self.config,
            },
        )
    }
}

/// Generates a scene and writes it as a package whose masks come from the
/// oracle (corrupted per the config).
pub fn synth(config: &PipelineConfig, out: &Path) -> Result<()> {
    let scene = generate_scene_with(&config.scene)?;
    let cats = catalogs();
    let source = OracleMasks {
        gt: &scene.gt,
        catalogs: &cats,
        corruption: config.corruption,
    };
    let mut masks: Vec<MaskSet> = Vec::new();
    let run = run_pipeline(&scene.cloud, &[], &cats, config, &source, &mut |_, m| {
        masks.extend(m.cloned());
        Ok(())
    })?;
    let mut cameras = vec![run.top_view.clone()];
    cameras.extend(run.plans.iter().flat_map(|p| p.views.iter().cloned()));
    ScenePackage::write(out, &scene.cloud, &cameras, &cats, Some(&scene.gt))?;
    for m in &masks {
        let catalog = if m.view_id() == TOP_VIEW_ID {
            &cats.instance
        } else {
            &cats.part
        };
        ScenePackage::<f64>::write_view_masks(out, m, catalog)?;
    }
    write_json(
        out.join("manifest.json"),
        &Manifest {
            command: "synth",
            version: env!("CARGO_PKG_VERSION"),
            scene: String::new(),
            oracle_masks: true,
            points: scene.cloud.len(),
            config,
        },
    )?;
    info!(
        "synth: {} objects, {} points, {} mask views",
        scene.objects.len(),
        scene.cloud.len(),
        masks.len()
    );
    Ok(())
}
