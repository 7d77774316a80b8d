use ssmkit_core::mesh::{save_mesh, write_manifest, ManifestEntry, MeshFormat};
use ssmkit_core::random::derive_seed;
use ssmkit_core::synthetic::{
    assign_groups, generate_cohort, generate_two_group_cohort, label_cohort, shuffle_vertices, CohortSpec, GroupRule,
    ShapeFamily,
};

use super::{read_json, snapshot};
use crate::error::CliResult;
use crate::output::{file_stem, RunDir, Table};
use crate::{Format, SynthArgs};

const STREAM_SHUFFLE: u64 = 4;

pub fn run(a: &SynthArgs) -> CliResult<()> {
    let mut spec: CohortSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => CohortSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let dir = RunDir::create(&a.out)?;
    let (mut cohort, table) = match (a.controls, a.pathology) {
        (Some(c), Some(p)) => {
            let (cohort, table, _) = generate_two_group_cohort::<f64>(&spec, c, p)?;
            (cohort, table)
        }
        _ => {
            let (mut cohort, table) = generate_cohort::<f64>(&spec)?;
            let varies = spec.bump.as_ref().is_some_and(|b| b.amplitude_range.1 > b.amplitude_range.0);
            if spec.family == ShapeFamily::BumpedEllipsoid && varies {
                let groups = assign_groups(&table, GroupRule::BumpAmplitudeThreshold)?;
                label_cohort(&mut cohort, &groups)?;
            }
            (cohort, table)
        }
    };
    snapshot(&dir, "synth", a, &spec)?;

    let format = match a.format {
        Format::Ply => MeshFormat::Ply,
        Format::Obj => MeshFormat::Obj,
    };
    let mesh_dir = dir.subdir("meshes")?;
    let mut perms = Table::new(&["subject_id", "vertex", "source_vertex"]);
    let mut entries = Vec::with_capacity(cohort.len());
    for (i, mesh) in cohort.meshes.iter_mut().enumerate() {
        if a.shuffle_vertices {
            let (shuffled, perm) = shuffle_vertices(mesh, derive_seed(spec.seed, STREAM_SHUFFLE, i as u64))?;
            for (v, src) in perm.iter().enumerate() {
                perms.push(vec![mesh.subject_id.clone(), v.to_string(), src.to_string()]);
            }
            *mesh = shuffled;
        }
        let name = format!("{}.{}", file_stem(&mesh.subject_id), format.extension());
        save_mesh(mesh, &mesh_dir.join(&name), format)?;
        entries.push(ManifestEntry {
            path: format!("meshes/{name}").into(),
            subject_id: mesh.subject_id.clone(),
            split: cohort.splits[i],
            group_label: cohort.group_labels[i].clone(),
        });
    }
    write_manifest(&dir.path("manifest.json"), &entries)?;
    dir.write("factors.csv", table.to_csv())?;
    if a.shuffle_vertices {
        dir.write_csv("vertex_permutations.csv", &perms)?;
    }
    log::info!("wrote {} meshes to {}", entries.len(), mesh_dir.display());
    Ok(())
}
