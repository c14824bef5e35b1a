//! File formats: the panel CSV, truth JSON, chain container, summary and
//! elasticity tables, and run manifests.
//!
//! The panel CSV is long format, one row per (individual, period):
//! `i, t, choice, p_1..p_Jp, z_<j>_<k>, w_<j1>_<j2>_<k>, zp_<j>_<k>` with a
//! mandatory header. Goods, periods, individuals, and covariate slots are
//! 1-based in the file. The chosen bundle is the sorted good list joined
//! with `+` (for example `1+3`); the outside option is the empty string.
//! Floats use the shortest round-trip decimal form, so write, read, write
//! is byte-stable.
//!
//! The chain container is `BCCHAIN1`, a little-endian u64 header length,
//! a JSON header (spec, sharing, names, metadata, resume state, section
//! dimensions), then the draws as little-endian f64 in section order
//! theta, lambda, factors, nu, sigma.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgp::TruthRecord;
use crate::error::{Error, Result};
use crate::mcmc::{PosteriorChain, SummaryRow};
use crate::model::{ChoiceSet, Obs, PanelData};
use crate::predict::{ElasticityTable, ShareTable};

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Column layout derived from a dataset's shape.
fn panel_header(cs: &ChoiceSet, j_p: usize, z_dims: &[usize], w_dims: &[usize], zp_dims: &[usize]) -> Vec<String> {
    let mut cols = vec!["i".to_string(), "t".to_string(), "choice".to_string()];
    for p in 0..j_p {
        cols.push(format!("p_{}", p + 1));
    }
    for (g, &d) in z_dims.iter().enumerate() {
        for k in 0..d {
            cols.push(format!("z_{}_{}", g + 1, k + 1));
        }
    }
    for (q, &(a, b)) in cs.pairs().iter().enumerate() {
        for k in 0..w_dims[q] {
            cols.push(format!("w_{}_{}_{}", a + 1, b + 1, k + 1));
        }
    }
    for (g, &d) in zp_dims.iter().enumerate() {
        for k in 0..d {
            cols.push(format!("zp_{}_{}", g + 1, k + 1));
        }
    }
    cols
}

fn choice_label(cs: &ChoiceSet, r: usize) -> String {
    cs.bundle(r)
        .iter()
        .map(|&g| (g + 1).to_string())
        .collect::<Vec<_>>()
        .join("+")
}

pub fn write_panel_csv(path: &Path, data: &PanelData) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let z_dims = data.z_dims();
    let w_dims = data.w_dims();
    let zp_dims = data.zp_dims();
    w.write_record(panel_header(&data.choice_set, data.j_p, &z_dims, &w_dims, &zp_dims))?;
    for (i, obs_list) in data.individuals.iter().enumerate() {
        for obs in obs_list {
            let mut rec = vec![
                (i + 1).to_string(),
                (obs.period + 1).to_string(),
                choice_label(&data.choice_set, obs.choice),
            ];
            for &p in &obs.prices {
                rec.push(fmt(p));
            }
            for xs in obs.z.iter().chain(obs.w.iter()).chain(obs.zp.iter()) {
                for &x in xs {
                    rec.push(fmt(x));
                }
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Parsed header shape: per-section column spans.
struct HeaderMap {
    j: usize,
    j_p: usize,
    z_dims: Vec<usize>,
    w_pairs: Vec<(usize, usize)>,
    w_dims: Vec<usize>,
    zp_dims: Vec<usize>,
}

fn parse_header(header: &csv::StringRecord) -> Result<HeaderMap> {
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "i" || cols[1] != "t" || cols[2] != "choice" {
        return Err(Error::Data(
            "panel CSV must start with columns i, t, choice".into(),
        ));
    }
    let mut j_p = 0;
    let mut z_dims: Vec<usize> = vec![];
    let mut w_pairs: Vec<(usize, usize)> = vec![];
    let mut w_dims: Vec<usize> = vec![];
    let mut zp_dims: Vec<usize> = vec![];
    let bad = |c: &str| Error::Data(format!("unrecognized or out-of-order column '{c}'"));
    let mut section = 0; // 0=p, 1=z, 2=w, 3=zp
    for &c in &cols[3..] {
        if let Some(rest) = c.strip_prefix("p_") {
            if section > 0 {
                return Err(bad(c));
            }
            let n: usize = rest.parse().map_err(|_| bad(c))?;
            if n != j_p + 1 {
                return Err(bad(c));
            }
            j_p = n;
        } else if let Some(rest) = c.strip_prefix("zp_") {
            section = 3;
            let (g, k) = parse_two(rest).ok_or_else(|| bad(c))?;
            if g == zp_dims.len() + 1 && k == 1 {
                zp_dims.push(1);
            } else if g == zp_dims.len() && k == zp_dims[g - 1] + 1 {
                zp_dims[g - 1] = k;
            } else {
                return Err(bad(c));
            }
        } else if let Some(rest) = c.strip_prefix("z_") {
            if section > 1 {
                return Err(bad(c));
            }
            section = 1;
            let (g, k) = parse_two(rest).ok_or_else(|| bad(c))?;
            if g == z_dims.len() + 1 && k == 1 {
                z_dims.push(1);
            } else if g == z_dims.len() && k == z_dims[g - 1] + 1 {
                z_dims[g - 1] = k;
            } else {
                return Err(bad(c));
            }
        } else if let Some(rest) = c.strip_prefix("w_") {
            if section > 2 {
                return Err(bad(c));
            }
            section = 2;
            let (a, b, k) = parse_three(rest).ok_or_else(|| bad(c))?;
            let pair = (a - 1, b - 1);
            if w_pairs.last() == Some(&pair) {
                let d = w_dims.last_mut().unwrap();
                if k != *d + 1 {
                    return Err(bad(c));
                }
                *d = k;
            } else {
                if k != 1 {
                    return Err(bad(c));
                }
                w_pairs.push(pair);
                w_dims.push(1);
            }
        } else {
            return Err(bad(c));
        }
    }
    let j = z_dims.len();
    if j == 0 {
        return Err(Error::Data("panel CSV has no z_ covariate columns".into()));
    }
    if zp_dims.len() != j_p {
        return Err(Error::Data(format!(
            "panel CSV has {} price columns but {} zp_ blocks",
            j_p,
            zp_dims.len()
        )));
    }
    Ok(HeaderMap {
        j,
        j_p,
        z_dims,
        w_pairs,
        w_dims,
        zp_dims,
    })
}

fn parse_two(s: &str) -> Option<(usize, usize)> {
    let mut it = s.split('_');
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    it.next().is_none().then_some((a, b))
}

fn parse_three(s: &str) -> Option<(usize, usize, usize)> {
    let mut it = s.split('_');
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    let c = it.next()?.parse().ok()?;
    it.next().is_none().then_some((a, b, c))
}

pub fn read_panel_csv(path: &Path) -> Result<PanelData> {
    let mut rdr = csv::Reader::from_path(path)?;
    let hm = parse_header(rdr.headers()?)?;
    let cs = ChoiceSet::enumerate(hm.j)?;
    if hm.w_pairs != cs.pairs() {
        return Err(Error::Data(
            "w_ columns do not enumerate the good pairs in order".into(),
        ));
    }
    let mut individuals: Vec<Vec<Obs>> = vec![];
    let mut id_of: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line_no = line + 2; // header is line 1
        let ctx = |what: &str| Error::Data(format!("line {line_no}: {what}"));
        let mut fields = rec.iter();
        let i_raw = fields.next().ok_or_else(|| ctx("missing i"))?.to_string();
        let t: usize = fields
            .next()
            .ok_or_else(|| ctx("missing t"))?
            .parse()
            .map_err(|_| ctx("t is not a positive integer"))?;
        if t == 0 {
            return Err(ctx("t must be 1-based"));
        }
        let choice_str = fields.next().ok_or_else(|| ctx("missing choice"))?;
        let choice = parse_choice(&cs, choice_str).map_err(|e| ctx(&e.to_string()))?;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    fields
                        .next()
                        .ok_or_else(|| ctx("row has too few fields"))?
                        .parse::<f64>()
                        .map_err(|_| ctx("non-numeric covariate"))
                })
                .collect()
        };
        let prices = take(hm.j_p)?;
        let z: Vec<Vec<f64>> = hm
            .z_dims
            .iter()
            .map(|&d| take(d))
            .collect::<Result<_>>()?;
        let w: Vec<Vec<f64>> = hm
            .w_dims
            .iter()
            .map(|&d| take(d))
            .collect::<Result<_>>()?;
        let zp: Vec<Vec<f64>> = hm
            .zp_dims
            .iter()
            .map(|&d| take(d))
            .collect::<Result<_>>()?;
        if fields.next().is_some() {
            return Err(ctx("row has too many fields"));
        }
        let idx = *id_of.entry(i_raw).or_insert_with(|| {
            individuals.push(vec![]);
            individuals.len() - 1
        });
        individuals[idx].push(Obs {
            period: t - 1,
            choice,
            prices,
            z,
            w,
            zp,
        });
    }
    if individuals.is_empty() {
        return Err(Error::Data("panel CSV has no data rows".into()));
    }
    let price_slot = detect_price_slot(&individuals, hm.j_p);
    PanelData::new(cs, hm.j_p, price_slot, individuals)
}

fn parse_choice(cs: &ChoiceSet, s: &str) -> Result<usize> {
    if s.is_empty() {
        return Ok(0);
    }
    let goods: Vec<usize> = s
        .split('+')
        .map(|g| {
            g.parse::<usize>()
                .ok()
                .filter(|&g| g >= 1 && g <= cs.n_goods())
                .map(|g| g - 1)
                .ok_or_else(|| Error::Data(format!("bad choice label '{s}'")))
        })
        .collect::<Result<_>>()?;
    cs.bundles()
        .iter()
        .position(|b| b == &goods)
        .ok_or_else(|| Error::Data(format!("choice '{s}' is not a sorted bundle label")))
}

/// A z slot that always equals the good's own price must be the price
/// column; prediction uses it to apply price counterfactuals.
fn detect_price_slot(individuals: &[Vec<Obs>], j_p: usize) -> Option<usize> {
    if j_p == 0 {
        return None;
    }
    let dims = individuals[0][0].z.iter().map(Vec::len).min()?;
    (0..dims).find(|&k| {
        individuals.iter().flatten().all(|obs| {
            obs.z
                .iter()
                .enumerate()
                .take(j_p)
                .all(|(g, zg)| zg[k] == obs.prices[g])
        })
    })
}

pub fn write_truth_json(path: &Path, truth: &TruthRecord) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, truth)?;
    Ok(())
}

pub fn read_truth_json(path: &Path) -> Result<TruthRecord> {
    let f = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

const CHAIN_MAGIC: &[u8; 8] = b"BCCHAIN1";

#[derive(Serialize, Deserialize)]
struct ChainHeader {
    skeleton: PosteriorChain,
    n_draws: usize,
    dims: Vec<(String, usize)>,
}

fn section_dims(chain: &PosteriorChain) -> Vec<(String, usize)> {
    let width = |v: &Vec<Vec<f64>>| v.first().map_or(0, Vec::len);
    vec![
        ("theta".into(), width(&chain.theta)),
        ("lambda".into(), width(&chain.lambda)),
        ("factors".into(), width(&chain.factors)),
        ("nu".into(), width(&chain.nu)),
        ("sigma".into(), width(&chain.sigma)),
    ]
}

pub fn write_chain(path: &Path, chain: &PosteriorChain) -> Result<()> {
    let mut skeleton = chain.clone();
    let sections = [
        std::mem::take(&mut skeleton.theta),
        std::mem::take(&mut skeleton.lambda),
        std::mem::take(&mut skeleton.factors),
        std::mem::take(&mut skeleton.nu),
        std::mem::take(&mut skeleton.sigma),
    ];
    let header = ChainHeader {
        n_draws: chain.n_draws(),
        dims: section_dims(chain),
        skeleton,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHAIN_MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for section in &sections {
        for row in section {
            for &x in row {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

pub fn read_chain(path: &Path) -> Result<PosteriorChain> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHAIN_MAGIC {
        return Err(Error::Data(format!(
            "{} is not a chain file (bad magic)",
            path.display()
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header_bytes = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header_bytes)?;
    let header: ChainHeader = serde_json::from_slice(&header_bytes)?;
    let mut chain = header.skeleton;
    let mut read_section = |dim: usize, n: usize| -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(if dim > 0 { n } else { 0 });
        if dim == 0 {
            return Ok(out);
        }
        let mut buf = vec![0u8; dim * 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            out.push(
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        Ok(out)
    };
    let dim_of = |name: &str| {
        header
            .dims
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, d)| d)
            .unwrap_or(0)
    };
    chain.theta = read_section(dim_of("theta"), header.n_draws)?;
    chain.lambda = read_section(dim_of("lambda"), header.n_draws)?;
    chain.factors = read_section(dim_of("factors"), header.n_draws)?;
    chain.nu = read_section(dim_of("nu"), header.n_draws)?;
    chain.sigma = read_section(dim_of("sigma"), header.n_draws)?;
    Ok(chain)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "mean", "sd", "q05", "q50", "q95", "split_stat"])?;
    for row in rows {
        w.write_record([
            row.name.clone(),
            fmt(row.mean),
            fmt(row.sd),
            fmt(row.q05),
            fmt(row.q50),
            fmt(row.q95),
            fmt(row.split_stat),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Share tables for a list of scenarios, one row per scenario.
pub fn write_shares_csv(
    path: &Path,
    cs: &ChoiceSet,
    tables: &[(String, ShareTable)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["scenario".to_string()];
    for g in 0..cs.n_goods() {
        header.push(format!("good_{}", g + 1));
    }
    header.push("outside".to_string());
    for r in 1..cs.n_bundles() {
        header.push(format!("bundle_{}", choice_label(cs, r)));
    }
    w.write_record(&header)?;
    for (label, t) in tables {
        let mut rec = vec![label.clone()];
        rec.extend(t.good.iter().map(|&x| fmt(x)));
        rec.extend(t.bundle.iter().map(|&x| fmt(x)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Elasticity matrices: one row per perturbed-price good, point estimate
/// and standard error interleaved per target column.
pub fn write_elasticities_csv(path: &Path, cs: &ChoiceSet, table: &ElasticityTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let j = cs.n_goods();
    let mut header = vec!["price_good".to_string()];
    for k in 0..j {
        header.push(format!("good_{}", k + 1));
        header.push(format!("good_{}_se", k + 1));
    }
    for r in 1..cs.n_bundles() {
        header.push(format!("bundle_{}", choice_label(cs, r)));
        header.push(format!("bundle_{}_se", choice_label(cs, r)));
    }
    w.write_record(&header)?;
    for g in 0..j {
        let mut rec = vec![(g + 1).to_string()];
        for k in 0..j {
            rec.push(fmt(table.good[g][k]));
            rec.push(fmt(table.good_se[g][k]));
        }
        for r in 0..table.bundle[g].len() {
            rec.push(fmt(table.bundle[g][r]));
            rec.push(fmt(table.bundle_se[g][r]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

pub fn write_elasticities_json(path: &Path, table: &ElasticityTable) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, table)?;
    Ok(())
}

/// Provenance record written next to every output set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub root_seed: u64,
    pub threads: usize,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_json: &serde_json::Value, root_seed: u64, threads: usize) -> Self {
        use sha2::Digest;
        let mut hasher = sha2::Sha256::new();
        hasher.update(serde_json::to_vec(config_json).unwrap_or_default());
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: format!("{:x}", hasher.finalize()),
            root_seed,
            threads,
            outputs: vec![],
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate_dataset, DgpConfig};
    use crate::mcmc::run_chain;
    use crate::spec::{McmcSettings, ModelSpec, Variant};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("bundlechoice-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn panel_csv_round_trip_is_byte_stable() {
        let cfg = DgpConfig {
            n_individuals: 15,
            n_periods: 3,
            seed: 5,
            ..Default::default()
        };
        let (data, _) = simulate_dataset(&cfg).unwrap();
        let p1 = tmp("panel_a.csv");
        let p2 = tmp("panel_b.csv");
        write_panel_csv(&p1, &data).unwrap();
        let back = read_panel_csv(&p1).unwrap();
        assert_eq!(back.j_p, data.j_p);
        assert_eq!(back.t_max, data.t_max);
        assert_eq!(back.price_slot, data.price_slot);
        assert_eq!(back.individuals, data.individuals);
        write_panel_csv(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let p = tmp("broken.csv");
        let good = "i,t,choice,z_1_1\n1,1,1,0.5\n1,2,,oops\n";
        std::fs::write(&p, good).unwrap();
        let err = read_panel_csv(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        std::fs::write(&p, "i,t,choice,z_1_1\n1,1,2,0.5\n").unwrap();
        let err = read_panel_csv(&p).unwrap_err().to_string();
        assert!(err.contains("choice"), "{err}");
    }

    #[test]
    fn exogenous_csv_has_no_price_columns() {
        let cfg = DgpConfig {
            n_individuals: 6,
            n_periods: 2,
            n_endogenous: 0,
            theta_p: vec![],
            lambda1: vec![1.0, 0.0, -1.0],
            seed: 6,
            ..Default::default()
        };
        let (data, _) = simulate_dataset(&cfg).unwrap();
        let p = tmp("panel_exo.csv");
        write_panel_csv(&p, &data).unwrap();
        let head = std::fs::read_to_string(&p).unwrap();
        let header = head.lines().next().unwrap();
        assert!(!header.contains("p_1"));
        assert!(!header.contains("zp_"));
        let back = read_panel_csv(&p).unwrap();
        assert_eq!(back.j_p, 0);
        assert_eq!(back.individuals, data.individuals);
    }

    #[test]
    fn truth_json_round_trip() {
        let cfg = DgpConfig {
            n_individuals: 4,
            n_periods: 2,
            seed: 7,
            ..Default::default()
        };
        let (_, truth) = simulate_dataset(&cfg).unwrap();
        let p = tmp("truth.json");
        write_truth_json(&p, &truth).unwrap();
        let back = read_truth_json(&p).unwrap();
        assert_eq!(back.theta_values, truth.theta_values);
        assert_eq!(back.loadings, truth.loadings);
    }

    #[test]
    fn chain_container_round_trip() {
        let cfg = DgpConfig {
            n_individuals: 10,
            n_periods: 2,
            seed: 8,
            ..Default::default()
        };
        let (data, truth) = simulate_dataset(&cfg).unwrap();
        let mut spec = ModelSpec::new(Variant::TvFa, true, 2);
        spec.mcmc = McmcSettings {
            burn_in: 2,
            draws: 4,
            thinning: 1,
            seed: 3,
            ..Default::default()
        };
        let chain = run_chain(&data, &truth.sharing, &spec).unwrap();
        let p = tmp("chain.bin");
        write_chain(&p, &chain).unwrap();
        let back = read_chain(&p).unwrap();
        assert_eq!(back.theta, chain.theta);
        assert_eq!(back.lambda, chain.lambda);
        assert_eq!(back.factors, chain.factors);
        let mut expect = chain.meta.clone();
        expect.wall_secs = 0.0;
        assert_eq!(back.meta, expect);
        assert_eq!(back.param_names, chain.param_names);
        // the resume state survives, so a continuation from the file
        // matches a continuation from memory
        let a = crate::mcmc::resume_chain(&data, &chain, 3).unwrap();
        let b = crate::mcmc::resume_chain(&data, &back, 3).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn chain_reader_rejects_other_files() {
        let p = tmp("not_a_chain.bin");
        std::fs::write(&p, b"hello world, definitely not a chain").unwrap();
        let err = read_chain(&p).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn table_writers_emit_expected_shapes() {
        let cs = ChoiceSet::enumerate(2).unwrap();
        let shares = ShareTable {
            bundle: vec![0.4, 0.3, 0.2, 0.1],
            good: vec![0.4, 0.3],
        };
        let p = tmp("shares.csv");
        write_shares_csv(&p, &cs, &[("baseline".into(), shares)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("scenario,good_1,good_2,outside,bundle_1,bundle_2,bundle_1+2\n"));

        let table = ElasticityTable {
            good: vec![vec![-2.0, 0.1], vec![0.2, -1.5]],
            good_se: vec![vec![0.01, 0.02], vec![0.03, 0.04]],
            bundle: vec![vec![0.0; 3]; 2],
            bundle_se: vec![vec![0.0; 3]; 2],
            undefined: vec![],
        };
        let pe = tmp("elast.csv");
        write_elasticities_csv(&pe, &cs, &table).unwrap();
        let text = std::fs::read_to_string(&pe).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("-2"));
    }

    #[test]
    fn manifest_hash_tracks_config() {
        let a = RunManifest::new("simulate", &serde_json::json!({"x": 1}), 0, 1);
        let b = RunManifest::new("simulate", &serde_json::json!({"x": 2}), 0, 1);
        assert_ne!(a.config_hash, b.config_hash);
        let p = tmp("manifest.json");
        write_manifest(&p, &a).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("config_hash"));
    }
}
