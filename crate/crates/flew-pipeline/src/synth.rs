//! Deterministic synthetic corpus generator.
//!
//! The generator plants three independent community structures over one set
//! of papers, one per facet. A paper's abstract is three sentences; each
//! sentence carries a topic token tied to the paper's community under one
//! facet, surrounded by filler vocabulary. Citations of a given intent run
//! overwhelmingly inside that facet's communities. Benchmark tasks ask for
//! exactly the planted structure, so the corpus separates pipelines that
//! keep the facets apart from ones that blur them — and it gives the CLI a
//! self-contained demo input.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use flew_core::corpus::{Paper, PaperStore};
use flew_core::eval::{
    write_task, ClassificationMetric, LabeledDoc, ProximityMetric, ProximityQuery,
    RelevanceJudgment, RetrievalQuery, Split, TargetDoc, ValidationTask,
};
use flew_core::hashing::{derive_seed_str, rng_from, DetRng};
use flew_core::Facet;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{PipelineError, Result};

/// Shape of the generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Total papers; must be a multiple of `community_size`.
    pub papers: usize,
    /// Members per community under every facet.
    pub community_size: usize,
    /// Citations emitted per paper per facet.
    pub edges_per_paper: usize,
    /// Fraction of citations that ignore community boundaries.
    pub cross_fraction: f64,
    /// Fraction of citation lines repeated verbatim modulo context count,
    /// exercising the ingest-side merge.
    pub duplicate_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            papers: 300,
            community_size: 20,
            edges_per_paper: 3,
            cross_fraction: 0.10,
            duplicate_fraction: 0.05,
            seed: 7,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.community_size < 6 {
            return Err(PipelineError::Config(
                "community_size must be at least 6 so every task can draw its samples".into(),
            ));
        }
        if self.papers == 0 || !self.papers.is_multiple_of(self.community_size) {
            return Err(PipelineError::Config(format!(
                "papers ({}) must be a positive multiple of community_size ({})",
                self.papers, self.community_size
            )));
        }
        if self.papers / self.community_size < 3 {
            return Err(PipelineError::Config(
                "need at least 3 communities; raise papers or lower community_size".into(),
            ));
        }
        if self.papers > 9999 {
            return Err(PipelineError::Config(
                "papers must stay below 10000 to keep ids fixed-width".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.cross_fraction)
            || !(0.0..=1.0).contains(&self.duplicate_fraction)
        {
            return Err(PipelineError::Config(
                "cross_fraction and duplicate_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.edges_per_paper == 0 {
            return Err(PipelineError::Config(
                "edges_per_paper must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A generated corpus: papers, raw citation lines, and benchmark tasks.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub store: PaperStore,
    /// Input-format citation lines, duplicates included.
    pub citation_lines: Vec<String>,
    /// `(file stem, task)` pairs in write order.
    pub tasks: Vec<(String, ValidationTask)>,
    pub seed: u64,
    membership: [Vec<usize>; 3],
    communities: usize,
}

fn facet_slot(facet: Facet) -> usize {
    match facet {
        Facet::Background => 0,
        Facet::Method => 1,
        Facet::Result => 2,
    }
}

fn paper_id(index: usize) -> String {
    format!("p{index:04}")
}

const FILLER_STEMS: [&str; 40] = [
    "lattice",
    "kernel",
    "manifold",
    "tensor",
    "operator",
    "spectrum",
    "gradient",
    "entropy",
    "cohort",
    "stratum",
    "residue",
    "quadrature",
    "basis",
    "flux",
    "potential",
    "cascade",
    "horizon",
    "attractor",
    "invariant",
    "partition",
    "filtration",
    "functor",
    "polytope",
    "fiber",
    "bundle",
    "sheaf",
    "module",
    "ideal",
    "variety",
    "monoid",
    "groupoid",
    "category",
    "isotope",
    "plasma",
    "dipole",
    "sediment",
    "enzyme",
    "ligand",
    "isotherm",
    "vortex",
];
const FILLER_VARIANTS: usize = 10;

fn filler(rng: &mut DetRng) -> String {
    let stem = FILLER_STEMS[rng.random_range(0..FILLER_STEMS.len())];
    let variant = rng.random_range(0..FILLER_VARIANTS);
    format!("{stem}{variant}")
}

/// The three abstract sentences for one paper. The second and third carry
/// the cue phrases the offline splitter keys on, so every generated
/// abstract splits into exactly these sentences.
fn paper_sentences(bg: usize, mt: usize, rs: usize, rng: &mut DetRng) -> [String; 3] {
    let mut f = || filler(rng);
    let background = format!(
        "In the study of bgtopic{bg}, {} {} interacts with {}, and bgtopic{bg} constrains {} beyond {}.",
        f(), f(), f(), f(), f(),
    );
    let method =
        format!(
        "We propose mttool{mt}, combining {} and {} so that mttool{mt} handles {} under {} and {}.",
        f(), f(), f(), f(), f(),
    );
    let result = format!(
        "Results show that rsbench{rs} improves {} and {}, since rsbench{rs} reduces {} across {} and {}.",
        f(), f(), f(), f(), f(),
    );
    [background, method, result]
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let n = spec.papers;
    let communities = n / spec.community_size;

    // Independent community partitions, one per facet.
    let membership: [Vec<usize>; 3] = Facet::ALL.map(|facet| {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng_from(derive_seed_str(
            spec.seed,
            "synth-communities",
            facet.short(),
        ));
        order.shuffle(&mut rng);
        let mut member_of = vec![0usize; n];
        for (rank, &paper) in order.iter().enumerate() {
            member_of[paper] = rank / spec.community_size;
        }
        member_of
    });
    let members: [Vec<Vec<usize>>; 3] = [0, 1, 2].map(|slot| {
        let mut lists = vec![Vec::new(); communities];
        for (paper, &c) in membership[slot].iter().enumerate() {
            lists[c].push(paper);
        }
        lists
    });

    let mut store = PaperStore::new();
    let mut text_rng = rng_from(derive_seed_str(spec.seed, "synth-text", ""));
    let slots = membership[0]
        .iter()
        .zip(membership[1].iter().zip(&membership[2]));
    for (i, (&bg_slot, (&mt_slot, &rs_slot))) in slots.enumerate() {
        let [background, method, result] =
            paper_sentences(bg_slot, mt_slot, rs_slot, &mut text_rng);
        store.insert(Paper {
            id: paper_id(i),
            title: format!("Corpus entry {i}"),
            abstract_text: format!("{background} {method} {result}"),
        })?;
    }

    let mut citation_lines = Vec::new();
    let mut dup_rng = rng_from(derive_seed_str(spec.seed, "synth-duplicates", ""));
    for facet in Facet::ALL {
        let slot = facet_slot(facet);
        let mut rng = rng_from(derive_seed_str(spec.seed, "synth-edges", facet.short()));
        for citing in 0..n {
            let own = &members[slot][membership[slot][citing]];
            for _ in 0..spec.edges_per_paper {
                let cited = loop {
                    let candidate = if rng.random::<f64>() < spec.cross_fraction {
                        rng.random_range(0..n)
                    } else {
                        own[rng.random_range(0..own.len())]
                    };
                    if candidate != citing {
                        break candidate;
                    }
                };
                let mut emit = |count: u64| {
                    citation_lines.push(
                        serde_json::json!({
                            "citing": paper_id(citing),
                            "cited": paper_id(cited),
                            "intent": facet.name(),
                            "context_count": count,
                        })
                        .to_string(),
                    );
                };
                emit(rng.random_range(1..=3));
                if dup_rng.random::<f64>() < spec.duplicate_fraction {
                    emit(dup_rng.random_range(1..=3));
                }
            }
        }
    }

    let tasks = build_tasks(spec, &membership, &members)?;

    Ok(SynthCorpus {
        store,
        citation_lines,
        tasks,
        seed: spec.seed,
        membership,
        communities,
    })
}

impl SynthCorpus {
    pub fn community_of(&self, facet: Facet, paper: usize) -> usize {
        self.membership[facet_slot(facet)][paper]
    }

    pub fn communities(&self) -> usize {
        self.communities
    }
}

/// Draws `count` distinct entries from `pool` without reordering bias.
fn draw(rng: &mut DetRng, pool: &[usize], count: usize) -> Vec<usize> {
    let mut copy = pool.to_vec();
    copy.shuffle(rng);
    copy.truncate(count);
    copy
}

fn proximity_task(
    name: &str,
    rng: &mut DetRng,
    queries: &[usize],
    facet_for: impl Fn(usize) -> Facet,
    membership: &[Vec<usize>; 3],
    members: &[Vec<Vec<usize>>; 3],
) -> ValidationTask {
    let n = membership[0].len();
    let query_list = queries
        .iter()
        .enumerate()
        .map(|(pos, &q)| {
            let slot = facet_slot(facet_for(pos));
            let community = membership[slot][q];
            let own: Vec<usize> = members[slot][community]
                .iter()
                .copied()
                .filter(|&p| p != q)
                .collect();
            let foreign: Vec<usize> = (0..n)
                .filter(|&p| membership[slot][p] != community)
                .collect();
            let mut candidates: Vec<RelevanceJudgment> = draw(rng, &own, 5)
                .into_iter()
                .map(|p| RelevanceJudgment {
                    id: paper_id(p),
                    relevance: 1.0,
                })
                .chain(
                    draw(rng, &foreign, 15)
                        .into_iter()
                        .map(|p| RelevanceJudgment {
                            id: paper_id(p),
                            relevance: 0.0,
                        }),
                )
                .collect();
            candidates.shuffle(rng);
            ProximityQuery {
                query: paper_id(q),
                candidates,
            }
        })
        .collect();
    ValidationTask::Proximity {
        name: name.to_string(),
        metric: ProximityMetric::Map,
        queries: query_list,
    }
}

fn build_tasks(
    spec: &SynthSpec,
    membership: &[Vec<usize>; 3],
    members: &[Vec<Vec<usize>>; 3],
) -> Result<Vec<(String, ValidationTask)>> {
    let n = spec.papers;
    let all: Vec<usize> = (0..n).collect();
    let mut tasks = Vec::new();

    for facet in Facet::ALL {
        let name = format!("planted-{}", facet.name());
        let mut rng = rng_from(derive_seed_str(spec.seed, "synth-task", &name));
        let queries = draw(&mut rng, &all, 40.min(n));
        let task = proximity_task(&name, &mut rng, &queries, |_| facet, membership, members);
        tasks.push((name, task));
    }

    {
        let name = "mixed-facets".to_string();
        let mut rng = rng_from(derive_seed_str(spec.seed, "synth-task", &name));
        let queries = draw(&mut rng, &all, 60.min(n));
        let task = proximity_task(
            &name,
            &mut rng,
            &queries,
            |pos| Facet::ALL[pos % 3],
            membership,
            members,
        );
        tasks.push((name, task));
    }

    {
        let name = "planted-retrieval".to_string();
        let mut rng = rng_from(derive_seed_str(spec.seed, "synth-task", &name));
        let slot = facet_slot(Facet::Result);
        let queries = draw(&mut rng, &all, 20.min(n))
            .into_iter()
            .map(|q| {
                let own: Vec<usize> = members[slot][membership[slot][q]]
                    .iter()
                    .copied()
                    .filter(|&p| p != q)
                    .collect();
                RetrievalQuery {
                    query: paper_id(q),
                    positives: draw(&mut rng, &own, 3).into_iter().map(paper_id).collect(),
                }
            })
            .collect();
        tasks.push((
            name.clone(),
            ValidationTask::Retrieval {
                name,
                k: 5,
                queries,
            },
        ));
    }

    {
        let name = "classify-background".to_string();
        let mut rng = rng_from(derive_seed_str(spec.seed, "synth-task", &name));
        let slot = facet_slot(Facet::Background);
        let mut docs = Vec::new();
        for (c, community) in members[slot].iter().enumerate() {
            for (pos, p) in draw(&mut rng, community, 6).into_iter().enumerate() {
                docs.push(LabeledDoc {
                    id: paper_id(p),
                    label: format!("field{c}"),
                    split: if pos < 4 { Split::Train } else { Split::Test },
                });
            }
        }
        tasks.push((
            name.clone(),
            ValidationTask::Classification {
                name,
                metric: ClassificationMetric::WeightedF1,
                k: 5,
                docs,
            },
        ));
    }

    {
        let name = "probe-result".to_string();
        let mut rng = rng_from(derive_seed_str(spec.seed, "synth-task", &name));
        let slot = facet_slot(Facet::Result);
        let mut docs = Vec::new();
        for (c, community) in members[slot].iter().enumerate() {
            for (pos, p) in draw(&mut rng, community, 4).into_iter().enumerate() {
                docs.push(TargetDoc {
                    id: paper_id(p),
                    target: c as f64,
                    split: if pos < 3 { Split::Train } else { Split::Test },
                });
            }
        }
        tasks.push((name.clone(), ValidationTask::RegressionProbe { name, docs }));
    }

    for (_, task) in &tasks {
        task.validate().map_err(PipelineError::Core)?;
    }
    Ok(tasks)
}

/// Writes `papers.jsonl`, `citations.jsonl`, `tasks/*.jsonl`, and a ready
/// `flew.conf` into `dir`; returns the config path.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<PathBuf> {
    let tasks_dir = dir.join("tasks");
    std::fs::create_dir_all(&tasks_dir).map_err(PipelineError::io(&tasks_dir))?;

    let papers_path = dir.join("papers.jsonl");
    let mut papers = BufWriter::new(
        std::fs::File::create(&papers_path).map_err(PipelineError::io(&papers_path))?,
    );
    for paper in corpus.store.iter() {
        let line =
            serde_json::to_string(paper).map_err(|e| PipelineError::Format(e.to_string()))?;
        writeln!(papers, "{line}").map_err(PipelineError::io(&papers_path))?;
    }
    papers.flush().map_err(PipelineError::io(&papers_path))?;

    let citations_path = dir.join("citations.jsonl");
    std::fs::write(&citations_path, corpus.citation_lines.join("\n") + "\n")
        .map_err(PipelineError::io(&citations_path))?;

    for (stem, task) in &corpus.tasks {
        let path = tasks_dir.join(format!("{stem}.jsonl"));
        let file = std::fs::File::create(&path).map_err(PipelineError::io(&path))?;
        let mut writer = BufWriter::new(file);
        write_task(task, &mut writer).map_err(PipelineError::Core)?;
        writer.flush().map_err(PipelineError::io(&path))?;
    }

    let config_path = dir.join("flew.conf");
    let config = format!(
        "# Generated demo corpus.\n\
         papers = papers.jsonl\n\
         citations = citations.jsonl\n\
         tasks_dir = tasks\n\
         stage_dir = stages\n\
         seed = {}\n\
         textual_mode = faceted\n\
         encoder.buckets = 16384\n",
        corpus.seed
    );
    std::fs::write(&config_path, config).map_err(PipelineError::io(&config_path))?;
    Ok(config_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flew_core::corpus::{ingest_citations, ingest_papers};
    use flew_core::text_splitter::{heuristic_split, validate_split};
    use std::io::Cursor;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            papers: 60,
            community_size: 10,
            seed: 11,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.citation_lines, b.citation_lines);
        assert_eq!(a.tasks, b.tasks);
    }

    #[test]
    fn every_abstract_splits_cleanly_into_its_planted_sentences() {
        let corpus = generate(&small_spec()).unwrap();
        for (i, paper) in corpus.store.iter().enumerate() {
            let split = heuristic_split(&paper.abstract_text).unwrap();
            let report = validate_split(&paper.abstract_text, &split);
            assert!(report.intact && report.coverage, "paper {i}: {report:?}");
            let bg = corpus.community_of(Facet::Background, i);
            let mt = corpus.community_of(Facet::Method, i);
            let rs = corpus.community_of(Facet::Result, i);
            assert!(split.background.contains(&format!("bgtopic{bg}")));
            assert!(!split.background.contains("mttool"));
            assert!(split.method.contains(&format!("mttool{mt}")));
            assert!(split.result.contains(&format!("rsbench{rs}")));
            assert!(!split.result.contains("mttool"));
        }
    }

    #[test]
    fn citations_ingest_cleanly_and_stay_mostly_intra_community() {
        let corpus = generate(&small_spec()).unwrap();
        let papers_jsonl: String = corpus
            .store
            .iter()
            .map(|p| serde_json::to_string(p).unwrap() + "\n")
            .collect();
        let ingest = ingest_papers(Cursor::new(papers_jsonl.as_bytes())).unwrap();
        assert!(ingest.rejected.is_empty());
        let citations = corpus.citation_lines.join("\n");
        let ingest = ingest_citations(Cursor::new(citations.as_bytes()), &ingest.store).unwrap();
        assert!(ingest.rejected.is_empty());

        for facet in Facet::ALL {
            let edges: Vec<_> = ingest
                .graph
                .edges()
                .iter()
                .filter(|e| e.intent == facet)
                .collect();
            assert!(!edges.is_empty());
            let intra = edges
                .iter()
                .filter(|e| {
                    let citing: usize = e.citing[1..].parse().unwrap();
                    let cited: usize = e.cited[1..].parse().unwrap();
                    corpus.community_of(facet, citing) == corpus.community_of(facet, cited)
                })
                .count();
            let fraction = intra as f64 / edges.len() as f64;
            assert!(fraction > 0.75, "{facet}: intra fraction {fraction}");
        }
    }

    #[test]
    fn duplicate_lines_exercise_the_merge_path() {
        let spec = SynthSpec {
            duplicate_fraction: 1.0,
            ..small_spec()
        };
        let corpus = generate(&spec).unwrap();
        // Every line got a duplicate with an independent context count.
        assert_eq!(corpus.citation_lines.len() % 2, 0);
        let singles = generate(&SynthSpec {
            duplicate_fraction: 0.0,
            ..small_spec()
        })
        .unwrap();
        assert_eq!(
            corpus.citation_lines.len(),
            2 * singles.citation_lines.len()
        );
    }

    #[test]
    fn tasks_cover_all_shapes_and_validate() {
        let corpus = generate(&small_spec()).unwrap();
        let stems: Vec<&str> = corpus.tasks.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(
            stems,
            [
                "planted-background",
                "planted-method",
                "planted-result",
                "mixed-facets",
                "planted-retrieval",
                "classify-background",
                "probe-result",
            ]
        );
        for (_, task) in &corpus.tasks {
            task.validate().unwrap();
            for id in task.ids() {
                assert!(corpus.store.contains(id), "unknown id {id}");
            }
        }
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let err = |spec: SynthSpec| generate(&spec).unwrap_err().to_string();
        assert!(err(SynthSpec {
            community_size: 4,
            ..SynthSpec::default()
        })
        .contains("community_size"));
        assert!(err(SynthSpec {
            papers: 301,
            ..SynthSpec::default()
        })
        .contains("multiple"));
        assert!(err(SynthSpec {
            papers: 40,
            community_size: 20,
            ..SynthSpec::default()
        })
        .contains("3 communities"));
    }

    #[test]
    fn written_corpus_loads_back_through_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate(&small_spec()).unwrap();
        let config_path = write_corpus(&corpus, dir.path()).unwrap();
        let cfg = crate::config::load_config(&config_path).unwrap();
        assert_eq!(cfg.papers, dir.path().join("papers.jsonl"));
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.encoder_buckets, 16384);

        let text = std::fs::read_to_string(&cfg.papers).unwrap();
        assert_eq!(text.lines().count(), 60);

        let task_file = dir.path().join("tasks/planted-result.jsonl");
        let file = std::fs::File::open(task_file).unwrap();
        let task = flew_core::eval::read_task(std::io::BufReader::new(file)).unwrap();
        assert_eq!(task, corpus.tasks[2].1);
    }
}
