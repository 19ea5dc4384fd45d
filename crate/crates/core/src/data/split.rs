use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

use super::{GeoBox, RegionBox, Sample};

/// Seeded permutation split of `0..n`: the first `floor(fraction·n)`
/// shuffled indices land in the first part.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = (fraction * n as f64).floor() as usize;
    let rest = order.split_off(cut);
    (order, rest)
}

/// The 9:1 train/test split: seeded shuffle, first floor(0.9·n) samples
/// to train. 2923 samples produce the 2630/293 partition of the source
/// dataset.
pub fn random_split(samples: Vec<Sample>, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if samples.len() < 2 {
        return Err(Error::Data(format!(
            "random_split needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let (train_idx, test_idx) = split_indices(samples.len(), 0.9, seed);
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let take = |idx: &[usize], slots: &mut Vec<Option<Sample>>| {
        idx.iter()
            .map(|i| slots[*i].take().expect("index used once"))
            .collect::<Vec<_>>()
    };
    let train = take(&train_idx, &mut slots);
    let test = take(&test_idx, &mut slots);
    Ok((train, test))
}

/// Outcome of a geographic partition.
pub struct RegionSplit {
    /// Parallel to the input region list.
    pub regions: Vec<(RegionBox, Vec<Sample>)>,
    pub unassigned: Vec<Sample>,
}

/// Assign each sample to the region containing its geo-box center;
/// samples without geo go to `unassigned`. Regions must be disjoint.
pub fn region_split(samples: Vec<Sample>, regions: &[RegionBox]) -> Result<RegionSplit> {
    for (i, a) in regions.iter().enumerate() {
        for b in regions.iter().skip(i + 1) {
            if a.bounds.intersects(&b.bounds) {
                return Err(Error::Data(format!(
                    "regions '{}' and '{}' overlap",
                    a.name, b.name
                )));
            }
        }
    }
    let mut buckets: Vec<Vec<Sample>> = regions.iter().map(|_| Vec::new()).collect();
    let mut unassigned = Vec::new();
    'next: for sample in samples {
        if let Some(geo) = &sample.geo {
            let (lon, lat) = geo.center();
            for (i, region) in regions.iter().enumerate() {
                if region.bounds.contains(lon, lat) {
                    buckets[i].push(sample);
                    continue 'next;
                }
            }
        }
        unassigned.push(sample);
    }
    Ok(RegionSplit {
        regions: regions.iter().cloned().zip(buckets).collect(),
        unassigned,
    })
}

/// The two Sichuan evaluation rectangles used for the cross-region
/// protocol (region 1: 98.937-100.730 E / 28.491-30.565 N, region 2:
/// 101.015-102.907 E / 28.336-33.079 N).
pub fn sichuan_regions() -> Vec<RegionBox> {
    vec![
        RegionBox {
            name: "region1".into(),
            bounds: GeoBox::new(98.937, 100.730, 28.491, 30.565).expect("static box"),
        },
        RegionBox {
            name: "region2".into(),
            bounds: GeoBox::new(101.015, 102.907, 28.336, 33.079).expect("static box"),
        },
    ]
}
