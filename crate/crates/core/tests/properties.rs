mod common;

use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;

use common::*;
use sitenet::clock::VirtualClock;
use sitenet::crawler::{crawl_site, CrawlConfig};
use sitenet::dataset::{build_dataset, overlap_stats, DataDirection, Sector};
use sitenet::fetch::{corpus_relative_path, CorpusFetcher};
use sitenet::link_index::{query_all_links, Direction, LinkProvider, LinkQuery, LocalIndex};
use sitenet::metrics::{
    betweenness, cohesion, degree, gini, mid_ranks, pearson, reciprocity, sector_matrix, spearman, ReciprocityMethod,
};
use sitenet::network::{combine, interlink, prune_seed_outlinks, read_matrix, write_matrix, Provenance};
use sitenet::report::{fmt2, read_edgelist, round2, write_edgelist};
use sitenet::site::{
    parse_url, rank_alias_candidates, reduce_to_site_key, AliasEvidence, AliasRule, AliasSet, Granularity, SiteKey,
    SiteResolver, SuffixTable,
};

const SUFFIXES: [&str; 6] = ["com", "co.uk", "ac.uk", "org", "gov.uk", "org.uk"];

fn host() -> impl Strategy<Value = String> {
    (
        prop::collection::vec("[a-z][a-z0-9]{0,5}", 1..4),
        0..SUFFIXES.len(),
        any::<bool>(),
    )
        .prop_map(|(labels, s, www)| {
            let h = format!("{}.{}", labels.join("."), SUFFIXES[s]);
            if www {
                format!("www.{h}")
            } else {
                h
            }
        })
}

fn digraph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..=max_n).prop_flat_map(|n| {
        let arcs = prop::collection::vec((0..n, 0..n), 0..n * n).prop_map(|a| {
            let set: BTreeSet<_> = a.into_iter().filter(|(x, y)| x != y).collect();
            set.into_iter().collect::<Vec<_>>()
        });
        (Just(n), arcs)
    })
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..50, 1..40).prop_map(|v| v.into_iter().map(f64::from).collect())
}

fn paired(min: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (min..30usize).prop_flat_map(|n| {
        (
            prop::collection::vec(-50i32..50, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(-50i32..50, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
        )
    })
}

fn non_constant(x: &[f64]) -> bool {
    x.iter().any(|a| *a != x[0])
}

/// Random URL-level links between a handful of hosts.
fn url_links() -> impl Strategy<Value = Vec<(String, String)>> {
    let hosts = [
        "a.com", "www.a.com", "b.co.uk", "x.b.co.uk", "c.ac.uk", "d.org", "e.gov.uk", "f.org.uk",
    ];
    prop::collection::vec((0..hosts.len(), 0..4u8, 0..hosts.len(), 0..4u8), 0..40).prop_map(move |v| {
        v.into_iter()
            .map(|(a, pa, b, pb)| (format!("http://{}/p{pa}", hosts[a]), format!("http://{}/p{pb}", hosts[b])))
            .collect()
    })
}

fn local_index(name: &str, links: &[(String, String)]) -> LocalIndex {
    LocalIndex::from_links(
        name,
        0,
        links.iter().map(|(a, b)| (parse_url(a).unwrap(), parse_url(b).unwrap())),
        &SuffixTable::bundled(),
    )
}

fn index_keys(index: &LocalIndex) -> BTreeSet<SiteKey> {
    index
        .site_links(Granularity::Domain)
        .into_iter()
        .flat_map(|(s, t)| [s, t])
        .collect()
}

fn site_pairs(records: &[sitenet::links::LinkRecord]) -> BTreeSet<(SiteKey, SiteKey)> {
    records.iter().map(|r| (r.source.clone(), r.target.clone())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn domain_reduction_is_idempotent_and_a_suffix_of_subdomain(h in host()) {
        let table = SuffixTable::bundled();
        let url = parse_url(&format!("http://{h}/x")).unwrap();
        let domain = reduce_to_site_key(&url, Granularity::Domain, &table).unwrap();
        let again = reduce_to_site_key(&parse_url(&format!("http://{domain}/")).unwrap(), Granularity::Domain, &table).unwrap();
        prop_assert_eq!(&again, &domain);
        let sub = reduce_to_site_key(&url, Granularity::Subdomain, &table).unwrap();
        let dotted = format!(".{domain}");
        prop_assert!(sub.as_str() == domain.as_str() || sub.as_str().ends_with(&dotted));
    }

    #[test]
    fn canonicalize_is_idempotent(groups in prop::collection::vec(prop::collection::btree_set("[a-z]{1,4}", 1..4), 0..4), probe in "[a-z]{1,4}") {
        let mut seen = BTreeSet::new();
        let rules: Vec<AliasRule> = groups
            .into_iter()
            .filter_map(|g| {
                let aliases: Vec<SiteKey> = g.into_iter().filter(|l| seen.insert(l.clone())).map(|l| key(&format!("{l}.com"))).collect();
                (!aliases.is_empty()).then(|| AliasRule { canonical: aliases[0].clone(), aliases, evidence: Default::default() })
            })
            .collect();
        let set = AliasSet::new(rules.clone()).unwrap();
        let probes = rules.iter().flat_map(|r| r.aliases.clone()).chain([key(&format!("{probe}.com"))]);
        for k in probes {
            let once = set.canonicalize(&k);
            prop_assert_eq!(set.canonicalize(&once), once);
        }
    }

    #[test]
    fn alias_ranking_is_a_permutation(ev in prop::collection::vec((prop::option::of(0u64..100), prop::option::of(0u64..100), prop::option::of(0u64..5)), 1..6)) {
        let candidates: Vec<(SiteKey, AliasEvidence)> = ev
            .into_iter()
            .enumerate()
            .map(|(i, (pages, inlinks, outlinks))| (key(&format!("alias{i}.com")), AliasEvidence { pages, inlinks, outlinks, first_seen: Some(format!("2000-01-{:02}", i + 1)) }))
            .collect();
        let ranked = rank_alias_candidates(&candidates).unwrap();
        let got: BTreeSet<_> = ranked.iter().cloned().collect();
        let want: BTreeSet<_> = candidates.iter().map(|(k, _)| k.clone()).collect();
        prop_assert_eq!(ranked.len(), candidates.len());
        prop_assert_eq!(got, want);
    }

    #[test]
    fn local_index_directions_are_transposes(links in url_links()) {
        let index = local_index("local", &links);
        let mut outs = BTreeSet::new();
        let mut ins = BTreeSet::new();
        for k in index_keys(&index) {
            let o = query_all_links(&index, &k, Direction::Outlinks, Granularity::Domain, 1000).unwrap();
            let i = query_all_links(&index, &k, Direction::Inlinks, Granularity::Domain, 1000).unwrap();
            prop_assert!(o.records.iter().all(|r| r.source == k));
            prop_assert!(i.records.iter().all(|r| r.target == k));
            outs.extend(site_pairs(&o.records));
            ins.extend(site_pairs(&i.records));
        }
        prop_assert_eq!(ins, outs);
    }

    #[test]
    fn split_harvest_covers_a_single_query_and_has_no_duplicates(links in url_links(), cap in 1usize..5) {
        let index = local_index("local", &links);
        for k in index_keys(&index) {
            for direction in [Direction::Inlinks, Direction::Outlinks] {
                let mut q = LinkQuery::new(k.clone(), direction, Granularity::Domain);
                q.max_results = cap;
                let single = index.query_links(&q).unwrap();
                let all = query_all_links(&index, &k, direction, Granularity::Domain, cap).unwrap();
                prop_assert!(site_pairs(&single.records).is_subset(&site_pairs(&all.records)));
                let triples: BTreeSet<_> = all.records.iter().map(|r| (r.source.clone(), r.target.clone(), r.provider.name.clone())).collect();
                prop_assert_eq!(triples.len(), all.records.len());
            }
        }
    }

    #[test]
    fn datasets_have_no_self_links_or_duplicates_and_ignore_provider_order(a in url_links(), b in url_links()) {
        let ia = local_index("alpha", &a);
        let ib = local_index("beta", &b);
        let mut members: Vec<SiteKey> = index_keys(&ia).union(&index_keys(&ib)).cloned().collect();
        if members.is_empty() {
            members.push(key("a.com"));
        }
        let sample = sample_of(&members, &vec![Sector::Industry; members.len()]);
        let resolver = SiteResolver::bundled(Granularity::Domain);
        for direction in [DataDirection::InData, DataDirection::OutData] {
            let ab = build_dataset(direction, &[&ia, &ib], &sample, &resolver).unwrap();
            let ba = build_dataset(direction, &[&ib, &ia], &sample, &resolver).unwrap();
            prop_assert_eq!(&ab.records, &ba.records);
            prop_assert!(ab.records.iter().all(|r| r.source != r.target));
            prop_assert_eq!(ab.pairs().len(), ab.records.len());
            prop_assert!(ab.deduped_count <= ab.raw_count);
        }
    }

    #[test]
    fn overlap_is_symmetric(a in prop::collection::btree_set(0u8..20, 0..15), b in prop::collection::btree_set(0u8..20, 0..15)) {
        let ab = overlap_stats(&a, &b);
        let ba = overlap_stats(&b, &a);
        prop_assert_eq!(ab.intersection, ba.intersection);
        prop_assert_eq!(ab.union, ba.union);
        prop_assert_eq!(ab.jaccard, ba.jaccard);
        prop_assert!((0.0..=1.0).contains(&ab.jaccard));
    }

    #[test]
    fn combine_is_a_lattice_join((n, x) in digraph(8), y in prop::collection::vec((0usize..8, 0usize..8), 0..30), z in prop::collection::vec((0usize..8, 0usize..8), 0..30)) {
        let clip = |v: Vec<(usize, usize)>| -> Vec<(usize, usize)> {
            v.into_iter().filter(|&(a, b)| a < n && b < n && a != b).collect::<BTreeSet<_>>().into_iter().collect()
        };
        let a = network(n, &x, Provenance::InData);
        let b = network(n, &clip(y), Provenance::OutData);
        let c = network(n, &clip(z), Provenance::OutData);
        let ab = combine(&a, &b).unwrap();
        prop_assert_eq!(combine(&ab, &c).unwrap(), combine(&a, &combine(&b, &c).unwrap()).unwrap());
        prop_assert!(ab.arc_keys().is_superset(&a.arc_keys()) && ab.arc_keys().is_superset(&b.arc_keys()));
        prop_assert!(ab.arc_count() <= a.arc_count() + b.arc_count());
    }

    #[test]
    fn interlinking_its_own_arcs_is_a_fixed_point((n, arcs) in digraph(8)) {
        let net = network(n, &arcs, Provenance::InData);
        let keys = node_keys(n);
        let sample = sample_of(&keys, &vec![Sector::Academia; n]);
        let pairs: Vec<_> = net.arc_keys().into_iter().collect();
        prop_assert_eq!(interlink(&dataset(DataDirection::InData, &pairs), &sample), net);
    }

    #[test]
    fn pruning_removes_arcs_and_isolates_only((n, arcs) in digraph(9)) {
        let net = network(n, &arcs, Provenance::Combined);
        let pruned = prune_seed_outlinks(&net, &net.seed.clone()).unwrap();
        prop_assert!(pruned.arc_count() <= net.arc_count());
        prop_assert!(pruned.arc_keys().is_subset(&net.arc_keys()));
        let seed = pruned.seed_index();
        prop_assert!((0..pruned.n()).all(|i| i == seed || !pruned.is_isolated(i)));
        prop_assert!((0..pruned.n()).all(|i| !pruned.has_arc(i, i)));
    }

    #[test]
    fn cohesion_measures_are_bounded((n, arcs) in digraph(9), dyad in any::<bool>()) {
        let net = network(n, &arcs, Provenance::InData);
        let method = if dyad { ReciprocityMethod::Dyad } else { ReciprocityMethod::Arc };
        let combined = combine(&net, &net).unwrap().arc_count().max(1);
        if n >= 2 {
            let c = cohesion(&net, Some(combined), method).unwrap();
            prop_assert!(c.inclusiveness_count <= c.n);
            prop_assert!((0.0..=1.0).contains(&c.density));
            prop_assert_eq!(c.density, c.ties as f64 / (n * (n - 1)) as f64);
            prop_assert!((0.0..=1.0).contains(&c.reciprocity));
            let gap = c.connectivity_gap.unwrap();
            prop_assert!((0.0..=1.0).contains(&gap));
        }
        prop_assert!((0.0..=1.0).contains(&reciprocity(&net, method)));
    }

    #[test]
    fn degrees_and_betweenness_match_oracles((n, arcs) in digraph(7)) {
        let net = network(n, &arcs, Provenance::InData);
        let (indeg, outdeg) = degree(&net);
        let set: BTreeSet<_> = arcs.iter().copied().collect();
        prop_assert_eq!((indeg.clone(), outdeg.clone()), degree_oracle(n, &set));
        prop_assert_eq!(indeg.iter().sum::<usize>(), net.arc_count());
        prop_assert_eq!(outdeg.iter().sum::<usize>(), net.arc_count());
        let want = betweenness_oracle(n, &arcs);
        for (g, w) in betweenness(&net).iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-9 && *g >= 0.0);
        }
    }

    #[test]
    fn two_node_networks_have_zero_betweenness(arc in any::<bool>(), back in any::<bool>()) {
        let arcs: Vec<_> = [(arc, (0, 1)), (back, (1, 0))].into_iter().filter(|p| p.0).map(|p| p.1).collect();
        prop_assert_eq!(betweenness(&network(2, &arcs, Provenance::InData)), vec![0.0, 0.0]);
    }

    #[test]
    fn gini_is_bounded_and_scale_invariant(x in values(), c in 0.01f64..100.0) {
        let g = gini(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        prop_assert!((gini(&scaled).unwrap() - g).abs() < 1e-12);
    }

    #[test]
    fn gini_of_constant_positive_vector_is_zero(v in 1u32..1000, n in 1usize..30) {
        prop_assert_eq!(gini(&vec![f64::from(v); n]).unwrap(), 0.0);
    }

    #[test]
    fn correlations_are_symmetric_bounded_and_invariant((x, y) in paired(3), a in 0.1f64..10.0, b in -100f64..100.0) {
        prop_assume!(non_constant(&x) && non_constant(&y));
        let r = pearson(&x, &y).unwrap();
        let rho = spearman(&x, &y).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
        prop_assert!((pearson(&y, &x).unwrap() - r).abs() < 1e-12);
        prop_assert!((spearman(&y, &x).unwrap() - rho).abs() < 1e-12);
        let affine: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson(&affine, &y).unwrap() - r).abs() < 1e-9);
        let monotone: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        prop_assert!((spearman(&monotone, &y).unwrap() - rho).abs() < 1e-12);
        prop_assert_eq!(mid_ranks(&x), rank_oracle(&x));
    }

    #[test]
    fn sector_cells_sum_to_ties((n, arcs) in digraph(9), sectors in prop::collection::vec(0usize..3, 9), exclude in any::<bool>()) {
        let net = network(n, &arcs, Provenance::Combined);
        let sectors: Vec<Sector> = sectors[..n].iter().map(|&i| Sector::ALL[i]).collect();
        let sample = sample_of(&node_keys(n), &sectors);
        let m = sector_matrix(&net, &sample, exclude).unwrap();
        let seed_out = if exclude { net.successors(net.seed_index()).count() } else { 0 };
        prop_assert_eq!(m.excluded_seed_arcs, seed_out);
        prop_assert_eq!(m.grand_total() + seed_out, net.arc_count());
        prop_assert_eq!(m.total_orgs(), n);
        for s in Sector::ALL {
            let orgs = m.org_counts[s.index()];
            let want = (orgs > 0).then(|| m.row_total(s) as f64 / orgs as f64);
            prop_assert_eq!(m.row_mean(s), want);
            let want = (orgs > 0).then(|| m.col_total(s) as f64 / orgs as f64);
            prop_assert_eq!(m.col_mean(s), want);
        }
        prop_assert_eq!(m.grand_mean(), Some(m.grand_total() as f64 / n as f64));
    }

    #[test]
    fn matrix_and_edgelist_round_trip((n, arcs) in digraph(9)) {
        let net = network(n, &arcs, Provenance::Combined);
        let back = read_edgelist(&write_edgelist(&net), Provenance::Combined).unwrap();
        prop_assert_eq!(back.nodes(), net.nodes());
        prop_assert_eq!(back.arc_keys(), net.arc_keys());
        prop_assert_eq!(&back.seed, &net.seed);
        let m = read_matrix(&write_matrix(&net), Provenance::Combined, net.seed.clone()).unwrap();
        prop_assert_eq!(m, net);
    }

    #[test]
    fn rendering_rounds_half_away_from_zero(eighths in 1i64..80_000, negative in any::<bool>()) {
        // multiples of 1/8 are exact, so every third-decimal 5 is a true tie
        let x = eighths as f64 / 8.0;
        let cents = (eighths * 125 + 5) / 10;
        let digits = format!("{}.{:02}", cents / 100, cents % 100);
        let (x, want) = if negative { (-x, format!("-{digits}")) } else { (x, digits) };
        prop_assert_eq!(fmt2(x), want);
        prop_assert_eq!(fmt2(round2(x)), fmt2(x));
    }
}

/// Writes pages for `links` (page index pairs) across two hosts into a
/// corpus directory. Page 0 on host a is the seed.
fn write_corpus(dir: &std::path::Path, pages: usize, links: &[(usize, usize)]) -> Vec<String> {
    let url = |i: usize| -> String {
        match (i % 3, i) {
            (_, 0) => "http://a.com/".to_string(),
            (2, _) => format!("http://b.org/p{i}"),
            _ => format!("http://a.com/p{i}"),
        }
    };
    for i in 0..pages {
        let body: String = links
            .iter()
            .filter(|l| l.0 == i)
            .map(|&(_, t)| format!("<a href=\"{}\">{t}</a>\n", url(t)))
            .collect();
        let path = dir.join(corpus_relative_path(&parse_url(&url(i)).unwrap()));
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, format!("<html><body>{body}</body></html>")).unwrap();
    }
    (0..pages).map(url).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn crawls_respect_depth_site_and_politeness(
        pages in 1usize..10,
        raw in prop::collection::vec((0usize..10, 0usize..10), 0..25),
        depth in 0u32..4,
        delay in 0u64..3000,
    ) {
        let links: Vec<_> = raw.into_iter().filter(|&(a, b)| a < pages && b < pages).collect();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), pages, &links);
        let cfg = CrawlConfig { max_depth: depth, per_host_delay_ms: delay, respect_robots: false, ..CrawlConfig::default() };
        let resolver = SiteResolver::bundled(Granularity::Domain);
        let fetcher = CorpusFetcher::new(dir.path());
        let seed = parse_url("http://a.com/").unwrap();
        let first = crawl_site(&seed, &cfg, &fetcher, &VirtualClock::starting_at(0), &resolver).unwrap();
        let second = crawl_site(&seed, &cfg, &fetcher, &VirtualClock::starting_at(0), &resolver).unwrap();
        prop_assert_eq!(&first, &second);
        for p in &first.pages {
            prop_assert!(p.depth <= depth);
            prop_assert_eq!(&p.site, &first.site);
        }
        prop_assert!(first.site_outlinks.iter().all(|r| r.source == first.site && r.target != r.source));
        let mut times: Vec<u64> = first.pages.iter().map(|p| p.fetched_at).collect();
        times.sort();
        prop_assert!(times.windows(2).all(|w| w[1] - w[0] >= delay));
    }
}
