use std::path::Path;

use clap::ArgMatches;
use rand::SeedableRng;

use lep_core::data::{load_pgm, occlude, save_pgm, OccludeRegion};
use lep_core::mesh::Shape;

use crate::common::{
    ensure_parent, from_core, required_string, resolve, resolve_opt_string, resolve_string,
    scheme_by_id, CmdError, CmdResult, FileConfig,
};

pub fn run(matches: &ArgMatches) -> CmdResult<()> {
    let file = FileConfig::from_matches(matches)?;
    let image_path = required_string(matches, &file, "image")?;
    let landmarks_path = required_string(matches, &file, "landmarks")?;
    let out_image = required_string(matches, &file, "out-image")?;
    let scheme = scheme_by_id(&resolve_string(matches, &file, "scheme", "face49"))?;

    let region_name = required_string(matches, &file, "region")?;
    let region = OccludeRegion::parse(&region_name)
        .ok_or_else(|| CmdError::config(format!("unknown region {region_name:?}")))?;
    let margin: f64 = resolve(matches, &file, "margin", 20.0)?;
    let jitter: Option<f64> = match resolve_opt_string(matches, &file, "jitter") {
        Some(raw) => Some(
            raw.parse()
                .map_err(|_| CmdError::config(format!("invalid value {raw:?} for --jitter")))?,
        ),
        None => None,
    };
    let seed: u64 = resolve(matches, &file, "seed", 1)?;

    let image = load_pgm(Path::new(&image_path)).map_err(from_core)?;
    let shape = Shape::load(Path::new(&landmarks_path), scheme).map_err(from_core)?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (occluded, bbox, shape_out) =
        occlude(&image, &shape, region, margin, jitter, &mut rng).map_err(from_core)?;

    let out_path = ensure_parent(&out_image)?;
    save_pgm(&occluded, &out_path).map_err(from_core)?;
    if let Some(out_landmarks) = resolve_opt_string(matches, &file, "out-landmarks") {
        let path = ensure_parent(&out_landmarks)?;
        shape_out.save(&path).map_err(from_core)?;
    }
    println!(
        "occluded {} region: box ({},{})-({},{}) -> {}",
        region.as_str(),
        bbox.x0,
        bbox.y0,
        bbox.x1,
        bbox.y1,
        out_path.display()
    );
    Ok(())
}
