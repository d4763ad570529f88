//! Synthetic multimodal cohort with controllable signal placement.
//!
//! Every class carries weak single-modality evidence (shifted clinical
//! features, biased allele frequencies at a set of planted loci, and the
//! vertical position of a bright blob in image slices 0 and 2). On top of
//! that, a clinical latent bit `c` and an imaging latent bit `m` are drawn per
//! patient. With probability `interaction_strength` (λ) a CN patient gets
//! `m = c` and an MCI patient gets `m ≠ c`; otherwise `m` is independent. The
//! single-modality MCI shifts are scaled by `1 − λ`, so at λ = 1 MCI and CN
//! differ only in whether the two bits agree.
//!
//! `c` shifts the first clinical block; `m` places a bright patch on the left
//! or right half of image slice 1.
//!
//! On disk a dataset is a directory:
//!
//! ```text
//! manifest.json          format tag, geometry, generating spec (if any)
//! clinical.csv           patient_id,<29 columns>
//! genetic.csv            patient_id,snp_0000,...   values in {0,1,2}
//! labels.csv             patient_id,label          label in {0,1,2}
//! images/<id>_<k>.pgm    binary PGM (P5, maxval 255), k = 0,1,2
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ModalitySample, MultimodalDataset, IMAGE_SLICES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::child_rng;

pub const CONTINUOUS_COLUMNS: usize = 21;
/// Category counts of the one-hot clinical blocks.
pub const ONE_HOT_BLOCKS: [usize; 3] = [2, 3, 3];
pub const PLANTED_LOCI: usize = 20;

const LATENT_COLS: std::ops::Range<usize> = 0..5;
const AD_COLS: std::ops::Range<usize> = 5..10;
const MCI_COLS: std::ops::Range<usize> = 10..14;

const DATASET_FORMAT: &str = "xmf-dataset-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    /// Standard deviation of the clinical Gaussian noise (before normalisation).
    pub clinical: f64,
    /// Probability that a planted-locus genotype ignores the class bias.
    pub genetic: f64,
    /// Upper bound of the uniform background intensity.
    pub imaging: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            clinical: 1.0,
            genetic: 0.3,
            imaging: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    /// Samples per class in CN, MCI, AD order.
    pub n_per_class: [usize; NUM_CLASSES],
    pub snp_count: usize,
    pub image_size: usize,
    pub seed: u64,
    pub interaction_strength: f64,
    pub noise: NoiseLevels,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_per_class: [455, 108, 97],
            snp_count: 1000,
            image_size: 72,
            seed: 0,
            interaction_strength: 1.0,
            noise: NoiseLevels::default(),
        }
    }
}

impl GenSpec {
    pub fn total(&self) -> usize {
        self.n_per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.n_per_class.iter().find(|&&n| n < 4) {
            return Err(Error::Config(format!("every class needs at least 4 samples, got {n}")));
        }
        if self.snp_count < PLANTED_LOCI {
            return Err(Error::Config(format!(
                "snp_count {} is below the {PLANTED_LOCI} planted loci",
                self.snp_count
            )));
        }
        if self.image_size < 24 {
            return Err(Error::Config(format!("image_size {} < 24", self.image_size)));
        }
        if !(0.0..=1.0).contains(&self.interaction_strength) {
            return Err(Error::Config(format!(
                "interaction_strength {} outside [0, 1]",
                self.interaction_strength
            )));
        }
        let n = &self.noise;
        let ok = n.clinical >= 0.0 && (0.0..=1.0).contains(&n.genetic) && (0.0..=1.0).contains(&n.imaging);
        if !ok {
            return Err(Error::Config(format!("invalid noise levels {n:?}")));
        }
        Ok(())
    }
}

pub fn clinical_column_names() -> Vec<String> {
    let mut cols: Vec<String> = (0..CONTINUOUS_COLUMNS).map(|i| format!("x{i:02}")).collect();
    for (b, &k) in ONE_HOT_BLOCKS.iter().enumerate() {
        cols.extend((0..k).map(|j| format!("cat{b}_{j}")));
    }
    cols
}

/// Indices of the loci whose allele frequencies depend on the class.
pub fn planted_loci(spec: &GenSpec) -> Vec<usize> {
    let mut rng = child_rng(spec.seed, "datagen/loci");
    let mut idx = rand::seq::index::sample(&mut rng, spec.snp_count, PLANTED_LOCI).into_vec();
    idx.sort_unstable();
    idx
}

/// Latent bits and class for each generated sample, in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub clinical_bit: Vec<bool>,
    pub imaging_bit: Vec<bool>,
}

pub fn generate(spec: &GenSpec) -> Result<MultimodalDataset> {
    generate_with_latents(spec).map(|(d, _)| d)
}

pub fn generate_with_latents(spec: &GenSpec) -> Result<(MultimodalDataset, Latents)> {
    spec.validate()?;
    let lambda = spec.interaction_strength;
    let n = spec.total();

    let mut labels: Vec<u8> = Vec::with_capacity(n);
    for (c, &k) in spec.n_per_class.iter().enumerate() {
        labels.extend(std::iter::repeat_n(c as u8, k));
    }
    labels.shuffle(&mut child_rng(spec.seed, "datagen/order"));

    let mut latent_rng = child_rng(spec.seed, "datagen/latent");
    let mut c_bits = Vec::with_capacity(n);
    let mut m_bits = Vec::with_capacity(n);
    for &y in &labels {
        let c: bool = latent_rng.random();
        let coupled = latent_rng.random::<f64>() < lambda;
        let free: bool = latent_rng.random();
        let m = match (y, coupled) {
            (0, true) => c,
            (1, true) => !c,
            _ => free,
        };
        c_bits.push(c);
        m_bits.push(m);
    }

    let clinical = gen_clinical(spec, &labels, &c_bits);
    let genetic = gen_genetic(spec, &labels);
    let images = gen_images(spec, &labels, &m_bits);

    let samples = (0..n)
        .zip(clinical)
        .zip(genetic)
        .zip(images)
        .map(|(((i, clinical), genetic), image)| ModalitySample {
            id: format!("P{i:04}"),
            clinical,
            genetic,
            image,
            label: labels[i],
        })
        .collect();
    let data = MultimodalDataset {
        clinical_columns: clinical_column_names(),
        snp_count: spec.snp_count,
        image_size: spec.image_size,
        samples,
    };
    data.validate()?;
    Ok((
        data,
        Latents {
            clinical_bit: c_bits,
            imaging_bit: m_bits,
        },
    ))
}

fn gen_clinical(spec: &GenSpec, labels: &[u8], c_bits: &[bool]) -> Vec<Vec<f64>> {
    let lambda = spec.interaction_strength;
    let mut rng = child_rng(spec.seed, "datagen/clinical");
    let noise = Normal::new(0.0, spec.noise.clinical).expect("validated std");
    let mut rows: Vec<Vec<f64>> = labels
        .iter()
        .zip(c_bits)
        .map(|(&y, &c)| {
            let mut row = Vec::with_capacity(CONTINUOUS_COLUMNS + 8);
            for j in 0..CONTINUOUS_COLUMNS {
                let mut mu = 0.0;
                if LATENT_COLS.contains(&j) {
                    mu += if c { 1.5 } else { -1.5 };
                }
                if AD_COLS.contains(&j) && y == 2 {
                    mu += 2.0;
                }
                if MCI_COLS.contains(&j) && y == 1 {
                    mu += 2.0 * (1.0 - lambda);
                }
                row.push(mu + noise.sample(&mut rng));
            }
            for &k in &ONE_HOT_BLOCKS {
                let hot = rng.random_range(0..k);
                row.extend((0..k).map(|j| if j == hot { 1.0 } else { 0.0 }));
            }
            row
        })
        .collect();

    for j in 0..CONTINUOUS_COLUMNS {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in rows.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
    }
    rows
}

fn gen_genetic(spec: &GenSpec, labels: &[u8]) -> Vec<Vec<u8>> {
    let lambda = spec.interaction_strength;
    let planted = planted_loci(spec);
    let mut is_planted = vec![false; spec.snp_count];
    for &i in &planted {
        is_planted[i] = true;
    }
    let mut freq_rng = child_rng(spec.seed, "datagen/freq");
    let base: Vec<f64> = (0..spec.snp_count).map(|_| freq_rng.random_range(0.05..0.45)).collect();
    let mut rng = child_rng(spec.seed, "datagen/genetic");
    labels
        .iter()
        .map(|&y| {
            let shift = match y {
                2 => 0.3,
                1 => 0.15 * (1.0 - lambda),
                _ => 0.0,
            };
            (0..spec.snp_count)
                .map(|j| {
                    let mut p = base[j];
                    if is_planted[j] && rng.random::<f64>() >= spec.noise.genetic {
                        p += shift;
                    }
                    u8::from(rng.random::<f64>() < p) + u8::from(rng.random::<f64>() < p)
                })
                .collect()
        })
        .collect()
}

fn gen_images(spec: &GenSpec, labels: &[u8], m_bits: &[bool]) -> Vec<Vec<u8>> {
    let lambda = spec.interaction_strength;
    let s = spec.image_size;
    let sf = s as f64;
    let mut rng = child_rng(spec.seed, "datagen/imaging");
    let sigma = sf / 12.0;
    let patch = s / 6;
    labels
        .iter()
        .zip(m_bits)
        .map(|(&y, &m)| {
            let blob_y = match y {
                2 => 0.3 * sf,
                1 => (0.7 - 0.2 * (1.0 - lambda)) * sf,
                _ => 0.7 * sf,
            };
            let blob_x = 0.5 * sf + rng.random_range(-0.05..0.05) * sf;
            let patch_x0 = if m { s - s / 8 - patch } else { s / 8 };
            let patch_y0 = (s - patch) / 2;
            let mut img = Vec::with_capacity(IMAGE_SLICES * s * s);
            for k in 0..IMAGE_SLICES {
                for r in 0..s {
                    for col in 0..s {
                        let mut v = rng.random_range(0.0..=spec.noise.imaging);
                        if k == 1 {
                            let inside = (patch_y0..patch_y0 + patch).contains(&r)
                                && (patch_x0..patch_x0 + patch).contains(&col);
                            if inside {
                                v += 0.7;
                            }
                        } else {
                            let d2 = (r as f64 - blob_y).powi(2) + (col as f64 - blob_x).powi(2);
                            v += 0.6 * (-d2 / (2.0 * sigma * sigma)).exp();
                        }
                        img.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            img
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    samples: usize,
    snp_count: usize,
    image_size: usize,
    clinical_columns: Vec<String>,
    spec: Option<GenSpec>,
}

pub fn export(data: &MultimodalDataset, dir: &Path, spec: Option<&GenSpec>) -> Result<()> {
    data.validate()?;
    fs::create_dir_all(dir.join("images"))?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        samples: data.len(),
        snp_count: data.snp_count,
        image_size: data.image_size,
        clinical_columns: data.clinical_columns.clone(),
        spec: spec.cloned(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    let mut clinical = String::from("patient_id");
    for c in &data.clinical_columns {
        clinical.push(',');
        clinical.push_str(c);
    }
    clinical.push('\n');
    let mut genetic = String::from("patient_id");
    for j in 0..data.snp_count {
        genetic.push_str(&format!(",snp_{j:04}"));
    }
    genetic.push('\n');
    let mut labels = String::from("patient_id,label\n");

    let s = data.image_size;
    for smp in &data.samples {
        clinical.push_str(&smp.id);
        for v in &smp.clinical {
            clinical.push(',');
            clinical.push_str(&v.to_string());
        }
        clinical.push('\n');
        genetic.push_str(&smp.id);
        for g in &smp.genetic {
            genetic.push(',');
            genetic.push((b'0' + g) as char);
        }
        genetic.push('\n');
        labels.push_str(&format!("{},{}\n", smp.id, smp.label));
        for k in 0..IMAGE_SLICES {
            let mut f = fs::File::create(dir.join("images").join(format!("{}_{k}.pgm", smp.id)))?;
            write!(f, "P5\n{s} {s}\n255\n")?;
            f.write_all(&smp.image[k * s * s..(k + 1) * s * s])?;
        }
    }
    fs::write(dir.join("clinical.csv"), clinical)?;
    fs::write(dir.join("genetic.csv"), genetic)?;
    fs::write(dir.join("labels.csv"), labels)?;
    Ok(())
}

/// Reads the generating spec recorded in a dataset manifest, if any.
pub fn read_spec(dir: &Path) -> Result<Option<GenSpec>> {
    let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    Ok(m.spec)
}

/// Parses a CSV whose first column is the patient id. Returns the header
/// (without the id column) and `(line_number, id, fields)` rows.
type CsvRows = (Vec<String>, Vec<(usize, String, Vec<String>)>);

fn read_csv(path: &Path, width: Option<usize>) -> Result<CsvRows> {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(&file, 1, "missing header"))?;
    let mut cols = header.split(',');
    if cols.next() != Some("patient_id") {
        return Err(Error::parse(&file, 1, "first column must be patient_id"));
    }
    let header: Vec<String> = cols.map(str::to_string).collect();
    let want = width.unwrap_or(header.len());
    if header.len() != want {
        return Err(Error::parse(
            &file,
            1,
            format!("expected {want} data columns, header has {}", header.len()),
        ));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().to_string();
        let rest: Vec<String> = fields.map(str::to_string).collect();
        if id.is_empty() || rest.len() != want {
            return Err(Error::parse(
                &file,
                lineno,
                format!("expected {} fields, found {}", want + 1, rest.len() + 1),
            ));
        }
        rows.push((lineno, id, rest));
    }
    Ok((header, rows))
}

fn read_pgm(path: &Path, size: usize) -> Result<Vec<u8>> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Data(format!("missing image file {name}"))
        } else {
            Error::Io(e)
        }
    })?;
    let header = format!("P5\n{size} {size}\n255\n");
    if !bytes.starts_with(header.as_bytes()) || bytes.len() != header.len() + size * size {
        return Err(Error::parse(
            &name,
            1,
            format!("expected a {size}x{size} P5 image with maxval 255"),
        ));
    }
    Ok(bytes[header.len()..].to_vec())
}

pub fn import(dir: &Path) -> Result<MultimodalDataset> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Data(format!("unknown dataset format {}", manifest.format)));
    }
    let (ccols, crows) = read_csv(&dir.join("clinical.csv"), Some(manifest.clinical_columns.len()))?;
    if ccols != manifest.clinical_columns {
        return Err(Error::parse("clinical.csv", 1, "header does not match manifest"));
    }
    let (_, grows) = read_csv(&dir.join("genetic.csv"), Some(manifest.snp_count))?;
    let (_, lrows) = read_csv(&dir.join("labels.csv"), Some(1))?;

    let mut samples = Vec::with_capacity(crows.len());
    for (line, id, fields) in crows {
        let clinical = fields
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse("clinical.csv", line, format!("{id}: {e}")))?;
        samples.push(ModalitySample {
            id,
            clinical,
            genetic: Vec::new(),
            image: Vec::new(),
            label: 0,
        });
    }
    let check_ids = |file: &str, rows: &[(usize, String, Vec<String>)]| -> Result<()> {
        if rows.len() != samples.len() {
            return Err(Error::Data(format!(
                "{file} lists {} patients, clinical.csv lists {}",
                rows.len(),
                samples.len()
            )));
        }
        for ((line, id, _), s) in rows.iter().zip(&samples) {
            if *id != s.id {
                return Err(Error::parse(
                    file,
                    *line,
                    format!("patient {id} does not match {}", s.id),
                ));
            }
        }
        Ok(())
    };
    check_ids("genetic.csv", &grows)?;
    check_ids("labels.csv", &lrows)?;

    for ((line, _, fields), s) in grows.iter().zip(samples.iter_mut()) {
        s.genetic = fields
            .iter()
            .map(|f| match f.as_str() {
                "0" => Ok(0),
                "1" => Ok(1),
                "2" => Ok(2),
                other => Err(Error::parse(
                    "genetic.csv",
                    *line,
                    format!("genotype {other:?} not in {{0,1,2}}"),
                )),
            })
            .collect::<Result<_>>()?;
    }
    for ((line, _, fields), s) in lrows.iter().zip(samples.iter_mut()) {
        s.label = match fields[0].parse::<u8>() {
            Ok(l) if (l as usize) < NUM_CLASSES => l,
            _ => return Err(Error::parse("labels.csv", *line, format!("bad label {:?}", fields[0]))),
        };
    }
    let size = manifest.image_size;
    for s in samples.iter_mut() {
        let mut image = Vec::with_capacity(IMAGE_SLICES * size * size);
        for k in 0..IMAGE_SLICES {
            image.extend(read_pgm(&dir.join("images").join(format!("{}_{k}.pgm", s.id)), size)?);
        }
        s.image = image;
    }
    if samples.len() != manifest.samples {
        return Err(Error::Data(format!(
            "manifest lists {} samples, files hold {}",
            manifest.samples,
            samples.len()
        )));
    }
    let data = MultimodalDataset {
        clinical_columns: manifest.clinical_columns,
        snp_count: manifest.snp_count,
        image_size: size,
        samples,
    };
    data.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GenSpec {
        GenSpec {
            n_per_class: [5, 4, 4],
            snp_count: 30,
            image_size: 24,
            ..GenSpec::default()
        }
    }

    #[test]
    fn counts_and_ranges() {
        let d = generate(&tiny()).unwrap();
        assert_eq!(d.class_counts(), [5, 4, 4]);
        assert_eq!(d.clinical_width(), 29);
        assert!(d.samples.iter().all(|s| s.genetic.iter().all(|&g| g <= 2)));
    }

    #[test]
    fn rejects_infeasible_spec() {
        let spec = GenSpec {
            n_per_class: [5, 3, 4],
            ..tiny()
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn interaction_couples_bits() {
        let spec = GenSpec {
            n_per_class: [40, 40, 4],
            ..tiny()
        };
        let (d, lat) = generate_with_latents(&spec).unwrap();
        for (i, s) in d.samples.iter().enumerate() {
            match s.label {
                0 => assert_eq!(lat.clinical_bit[i], lat.imaging_bit[i]),
                1 => assert_ne!(lat.clinical_bit[i], lat.imaging_bit[i]),
                _ => {}
            }
        }
    }
}
