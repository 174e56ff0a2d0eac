use serde::{Deserialize, Serialize};

use crate::data::manifest::{DatasetManifest, Partition};
use crate::data::metrics::psnr_serde;
use crate::error::{Error, Result};

/// Sizes of `k` contiguous groups over `n` sorted items; sizes differ by at
/// most one and the remainder goes to the lowest groups first.
pub fn equal_size_groups(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionGroup {
    pub partition: Partition,
    pub count: usize,
    #[serde(with = "psnr_serde")]
    pub min_psnr_db: f64,
    /// Upper boundary of the group.
    #[serde(with = "psnr_serde")]
    pub max_psnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub groups: Vec<PartitionGroup>,
}

/// Tags records LQ/MQ/HQ as equal-size terciles of input PSNR. Ties are
/// broken by canonical record order. The returned manifest keeps canonical
/// order.
pub fn partition_by_psnr(manifest: &DatasetManifest) -> Result<(DatasetManifest, PartitionReport)> {
    let k = Partition::EXPERTS.len();
    let records = manifest.records();
    if records.len() < k {
        return Err(Error::config(format!(
            "cannot split {} records into {k} partitions",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].psnr_db.total_cmp(&records[b].psnr_db));
    let mut tags = vec![Partition::Unassigned; records.len()];
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for (size, partition) in equal_size_groups(records.len(), k)
        .into_iter()
        .zip(Partition::EXPERTS)
    {
        let members = &order[start..start + size];
        for &i in members {
            tags[i] = partition;
        }
        groups.push(PartitionGroup {
            partition,
            count: size,
            min_psnr_db: records[members[0]].psnr_db,
            max_psnr_db: records[members[size - 1]].psnr_db,
        });
        start += size;
    }
    Ok((manifest.with_partitions(tags), PartitionReport { groups }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{ImagePair, Split};
    use proptest::prelude::*;

    fn manifest(psnrs: &[f64]) -> DatasetManifest {
        let recs = psnrs
            .iter()
            .enumerate()
            .map(|(i, &p)| ImagePair {
                input: format!("{i:04}.png"),
                target: format!("gt{i:04}.png"),
                psnr_db: p,
                partition: Partition::Unassigned,
            })
            .collect();
        DatasetManifest::new(recs, Split::Train, None, ".").unwrap()
    }

    #[test]
    fn sorted_terciles() {
        let m = manifest(&[20.0, 10.0, 25.0, 15.0, 12.0, 17.0]);
        let (p, rep) = partition_by_psnr(&m).unwrap();
        let tag = |v: f64| {
            p.records()
                .iter()
                .find(|r| r.psnr_db == v)
                .unwrap()
                .partition
        };
        assert_eq!((tag(10.0), tag(12.0)), (Partition::Lq, Partition::Lq));
        assert_eq!((tag(15.0), tag(17.0)), (Partition::Mq, Partition::Mq));
        assert_eq!((tag(20.0), tag(25.0)), (Partition::Hq, Partition::Hq));
        let bounds: Vec<f64> = rep.groups.iter().map(|g| g.max_psnr_db).collect();
        assert_eq!(bounds, vec![12.0, 17.0, 25.0]);
    }

    #[test]
    fn remainder_rule() {
        assert_eq!(equal_size_groups(7, 3), vec![3, 2, 2]);
        assert_eq!(equal_size_groups(8, 3), vec![3, 3, 2]);
        let (_, rep) = partition_by_psnr(&manifest(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])).unwrap();
        assert_eq!(
            rep.groups.iter().map(|g| g.count).collect::<Vec<_>>(),
            vec![3, 2, 2]
        );
    }

    #[test]
    fn too_few_records() {
        assert!(matches!(
            partition_by_psnr(&manifest(&[1.0, 2.0])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ties_follow_canonical_order() {
        let (p, _) = partition_by_psnr(&manifest(&[5.0; 6])).unwrap();
        let tags: Vec<_> = p.records().iter().map(|r| r.partition).collect();
        use Partition::*;
        assert_eq!(tags, vec![Lq, Lq, Mq, Mq, Hq, Hq]);
    }

    proptest! {
        #[test]
        fn partition_invariants(psnrs in prop::collection::vec(1.0f64..60.0, 3..60)) {
            let m = manifest(&psnrs);
            let (p, rep) = partition_by_psnr(&m).unwrap();
            prop_assert_eq!(p.len(), m.len());
            prop_assert!(p.records().iter().all(|r| r.partition != Partition::Unassigned));
            let counts: Vec<usize> = Partition::EXPERTS.iter().map(|&t| p.partition(t).len()).collect();
            prop_assert_eq!(counts.iter().sum::<usize>(), m.len());
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            for w in rep.groups.windows(2) {
                prop_assert!(w[0].max_psnr_db <= w[1].min_psnr_db);
            }
        }
    }
}
