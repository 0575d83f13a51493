//! Builtin model corpus: eight circuit topologies, some in several input
//! conventions, each with the output selections used by the reference
//! analyses. Sources are shipped as plain DSL files under `corpus/` and
//! embedded here; see `corpus/MANIFEST.md` for the naming conventions.

use super::{parse_model, ModelError, OdeModel};

/// One (input convention, output selection) analysis configuration.
#[derive(Debug, Clone)]
pub struct Variant {
    /// Stable slug, e.g. `y=Z1` or `y=s,c,T`, scoped by the entry name.
    pub slug: String,
    pub outputs: Vec<String>,
    /// Expected to exceed the default resource budget; the batch runner
    /// reports these as skipped rather than failed.
    pub budget_heavy: bool,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: &'static str,
    /// Circuit topology; entries that differ only in input convention share it.
    pub topology: &'static str,
    pub source: &'static str,
    pub model: OdeModel,
    pub variants: Vec<Variant>,
    /// Representative of its topology in the accessibility/controllability
    /// table.
    pub table1: bool,
}

impl CorpusEntry {
    /// Model configured for one variant (inputs unchanged, outputs selected).
    pub fn variant_model(&self, v: &Variant) -> Result<OdeModel, ModelError> {
        let inputs: Vec<&str> = self.model.inputs.iter().map(|i| i.symbol.name()).collect();
        let outputs: Vec<&str> = v.outputs.iter().map(|s| s.as_str()).collect();
        self.model.configure(&inputs, &outputs)
    }

    pub fn variant(&self, slug: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.slug == slug)
    }
}

struct EntrySpec {
    name: &'static str,
    topology: &'static str,
    source: &'static str,
    table1: bool,
    variants: &'static [&'static str],
    heavy: &'static [&'static str],
}

const BIOSD_OUTS: &[&str] = &["X", "Z1", "Z2", "Z1,Z2", "X,Z1", "X,Z2"];
const DICHO_OUTS: &[&str] = &["HK", "RR", "SR"];
const CLOSED_OUTS: &[&str] =
    &["R", "r", "s", "r,s", "c", "r,c", "s,c", "r,s,c", "R,r", "R,s", "R,r,s", "R,c"];

const ENTRIES: &[EntrySpec] = &[
    EntrySpec {
        name: "biosd_1",
        topology: "biosd_1",
        source: include_str!("../../corpus/biosd_1.sa"),
        table1: true,
        variants: &["X", "Z", "X,Z"],
        heavy: &[],
    },
    EntrySpec {
        name: "biosd_2",
        topology: "biosd_2",
        source: include_str!("../../corpus/biosd_2.sa"),
        table1: true,
        variants: BIOSD_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "biosd_2mm_simple",
        topology: "biosd_2mm_simple",
        source: include_str!("../../corpus/biosd_2mm_simple.sa"),
        table1: true,
        variants: BIOSD_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "biosd_2mm_complex",
        topology: "biosd_2mm_complex",
        source: include_str!("../../corpus/biosd_2mm_complex.sa"),
        table1: true,
        variants: BIOSD_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "biosd_3",
        topology: "biosd_3",
        source: include_str!("../../corpus/biosd_3.sa"),
        table1: true,
        variants: BIOSD_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "dichotomous_i",
        topology: "dichotomous",
        source: include_str!("../../corpus/dichotomous_i.sa"),
        table1: false,
        variants: DICHO_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "dichotomous_i_beta_hk",
        topology: "dichotomous",
        source: include_str!("../../corpus/dichotomous_i_beta_hk.sa"),
        table1: false,
        variants: DICHO_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "dichotomous_i_beta_rr",
        topology: "dichotomous",
        source: include_str!("../../corpus/dichotomous_i_beta_rr.sa"),
        table1: false,
        variants: DICHO_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "dichotomous_i_beta_sr",
        topology: "dichotomous",
        source: include_str!("../../corpus/dichotomous_i_beta_sr.sa"),
        table1: false,
        variants: DICHO_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "dichotomous_kap",
        topology: "dichotomous",
        source: include_str!("../../corpus/dichotomous_kap.sa"),
        table1: true,
        variants: DICHO_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "dichotomous_kap_beta_hk",
        topology: "dichotomous",
        source: include_str!("../../corpus/dichotomous_kap_beta_hk.sa"),
        table1: false,
        variants: DICHO_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "dichotomous_kap_beta_rr",
        topology: "dichotomous",
        source: include_str!("../../corpus/dichotomous_kap_beta_rr.sa"),
        table1: false,
        variants: DICHO_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "dichotomous_kap_beta_sr",
        topology: "dichotomous",
        source: include_str!("../../corpus/dichotomous_kap_beta_sr.sa"),
        table1: false,
        variants: DICHO_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "srna_autorepressor_u",
        topology: "srna_autorepressor",
        source: include_str!("../../corpus/srna_autorepressor_u.sa"),
        table1: false,
        variants: &["t,s,c,T"],
        heavy: &[],
    },
    EntrySpec {
        name: "srna_autorepressor_g",
        topology: "srna_autorepressor",
        source: include_str!("../../corpus/srna_autorepressor_g.sa"),
        table1: true,
        variants: &["t,s,c,T", "s,c,T", "c,T", "t,T", "s,T", "t", "s", "c", "T"],
        heavy: &["t", "s", "c", "T"],
    },
    EntrySpec {
        name: "closed_loop_u",
        topology: "closed_loop",
        source: include_str!("../../corpus/closed_loop_u.sa"),
        table1: false,
        variants: CLOSED_OUTS,
        heavy: &[],
    },
    EntrySpec {
        name: "closed_loop_g",
        topology: "closed_loop",
        source: include_str!("../../corpus/closed_loop_g.sa"),
        table1: true,
        variants: CLOSED_OUTS,
        heavy: &[],
    },
];

/// All builtin entries, in stable order.
pub fn corpus() -> Vec<CorpusEntry> {
    ENTRIES
        .iter()
        .map(|spec| {
            let model = parse_model(spec.source)
                .unwrap_or_else(|e| panic!("builtin model {}: {}", spec.name, e));
            let variants = spec
                .variants
                .iter()
                .map(|outs| Variant {
                    slug: format!("y={outs}"),
                    outputs: outs.split(',').map(str::to_string).collect(),
                    budget_heavy: spec.heavy.contains(outs),
                })
                .collect();
            CorpusEntry {
                name: spec.name,
                topology: spec.topology,
                source: spec.source,
                model,
                variants,
                table1: spec.table1,
            }
        })
        .collect()
}

/// Resolves a corpus selector: exact entry name first, then a topology name,
/// disambiguated by the requested input set when a topology has several input
/// conventions (e.g. `srna_autorepressor` with inputs `gammaR` vs `u1,u2`).
pub fn find<'a>(
    entries: &'a [CorpusEntry],
    selector: &str,
    inputs: Option<&[String]>,
) -> Option<&'a CorpusEntry> {
    if let Some(e) = entries.iter().find(|e| e.name == selector) {
        return Some(e);
    }
    let mut candidates: Vec<&CorpusEntry> =
        entries.iter().filter(|e| e.topology == selector).collect();
    if let Some(req) = inputs {
        candidates.retain(|e| {
            let declared: Vec<&str> = e.model.inputs.iter().map(|i| i.symbol.name()).collect();
            req.len() == declared.len() && req.iter().all(|r| declared.contains(&r.as_str()))
        });
    }
    match candidates.len() {
        1 => Some(candidates[0]),
        0 => None,
        // ambiguous topology without input filter: the representative entry
        _ => candidates.iter().find(|e| e.table1).copied().or(Some(candidates[0])),
    }
}
