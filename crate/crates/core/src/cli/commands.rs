use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use super::{
    Arch, CliError, DistillArgs, EvalArgs, EvalSplit, ExportEmbeddingsArgs, ExportKnowledgeArgs, GenDataArgs,
    MetricName, ReportArgs, TrainArgs,
};
use crate::distill::{
    train_graph_level, train_graph_supervised, train_node_level, train_supervised, DistillConfig, LogitIdentifier,
    RepIdentifier, SupervisedConfig, TrainReport,
};
use crate::graphio::{
    gcn_normalize, graphset_generate, load_dataset, save_graph, save_graphset, sbm_generate, Dataset, Graph, GraphSet,
    GraphSetParams, Labels, SbmParams, Split,
};
use crate::metrics::{accuracy, f1_micro, roc_auc, silhouette, threshold_multilabel, EvalResult};
use crate::models::{
    count_params, load_knowledge, node_forward_values, precompute_graph_knowledge, precompute_knowledge, save_knowledge,
    AnyModel, GcnModel, GcniiModel, GinModel, KnowledgeLevel,
};
use crate::numkit::{softmax_rows, DenseMatrix};

fn fmt_value(v: f32) -> String {
    format!("{v:.8e}")
}

fn parse_blocks(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Config(format!("bad --blocks {spec:?}; use COUNTxSIZE or a comma list"));
    if let Some((count, size)) = spec.split_once('x') {
        let count: usize = count.trim().parse().map_err(|_| bad())?;
        let size: usize = size.trim().parse().map_err(|_| bad())?;
        return Ok(vec![size; count]);
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

pub(super) fn gen_data(a: &GenDataArgs) -> Result<String, CliError> {
    let split = (a.train_frac, a.val_frac);
    if a.graphset {
        let p = GraphSetParams {
            num_graphs: a.num_graphs,
            min_nodes: a.min_nodes,
            max_nodes: a.max_nodes,
            dense_p: a.dense_p,
            shortcut_p: a.shortcut_p,
            feature_dim: a.features.unwrap_or(8),
            noise: a.noise,
            seed: a.common.seed,
            split,
        };
        let set = graphset_generate(&p)?;
        save_graphset(&set, &a.out)?;
        return Ok(format!("graphset graphs={} nodes={}\n", set.len(), set.total_nodes()));
    }
    let mut p = SbmParams::new(
        parse_blocks(&a.blocks)?,
        a.p_in,
        a.p_out,
        a.features.unwrap_or(16),
        a.noise,
        a.common.seed,
    );
    p.split = split;
    let g = sbm_generate(&p)?;
    save_graph(&g, &a.out)?;
    Ok(format!("graph nodes={} edges={}\n", g.num_nodes(), g.num_edges()))
}

/// Writes the report to `--report` or returns it for stdout.
fn emit_report(mut report: TrainReport, opts: &ReportArgs, started: Instant) -> Result<String, CliError> {
    if opts.timing {
        report.summary.seconds = Some(started.elapsed().as_secs_f64());
    }
    let text = report.to_json_lines();
    match &opts.report {
        Some(path) => {
            fs::write(path, &text)?;
            let last = report.last();
            let fmt = |v: Option<f64>| v.map_or("none".to_string(), |v| format!("{v:.6}"));
            Ok(format!(
                "{} train={} val={} test={}\n",
                report.summary.metric,
                fmt(last.and_then(|r| r.train_metric)),
                fmt(last.and_then(|r| r.val_metric)),
                fmt(last.and_then(|r| r.test_metric)),
            ))
        }
        None => Ok(text),
    }
}

fn need_graph(d: Dataset, what: &str) -> Result<Graph, CliError> {
    match d {
        Dataset::Graph(g) => Ok(g),
        Dataset::Set(_) => Err(CliError::Config(format!("{what} needs a single graph, got a graph set"))),
    }
}

fn need_set(d: Dataset, what: &str) -> Result<GraphSet, CliError> {
    match d {
        Dataset::Set(s) => Ok(s),
        Dataset::Graph(_) => Err(CliError::Config(format!("{what} needs a graph set, got a single graph"))),
    }
}

fn build_node_model(arch: Arch, g: &Graph, hidden: usize, layers: usize, alpha: f32, lambda: f32, seed: u64) -> Result<AnyModel, CliError> {
    let (f, c) = (g.feature_dim(), g.num_classes());
    Ok(match arch {
        Arch::Gcn => AnyModel::Gcn(GcnModel::new(f, hidden, c, layers, seed)?),
        Arch::Gcnii => AnyModel::Gcnii(GcniiModel::new(f, hidden, c, layers, alpha, lambda, seed)?),
        Arch::Gin => return Err(CliError::Config("gin needs a graph set".into())),
    })
}

pub(super) fn train_teacher(a: &TrainArgs) -> Result<String, CliError> {
    let started = Instant::now();
    let data = load_dataset(&a.graph)?;
    let seed = a.common.seed;
    let layers = a.layers.unwrap_or(match a.arch {
        Arch::Gcnii => 8,
        Arch::Gcn => 2,
        Arch::Gin => 5,
    });
    let cfg = SupervisedConfig {
        epochs: a.epochs.unwrap_or(300),
        lr: a.lr,
        seed,
    };
    let (model, report) = match a.arch {
        Arch::Gin => {
            let set = need_set(data, "gin")?;
            let mut m = GinModel::new(set.feature_dim(), a.hidden, set.num_classes(), layers, seed)?;
            let r = train_graph_supervised(&set, &mut m, &cfg)?;
            (AnyModel::Gin(m), r)
        }
        arch => {
            let g = need_graph(data, "gcn and gcnii")?;
            let mut m = build_node_model(arch, &g, a.hidden, layers, a.alpha, a.lambda, seed)?;
            let r = match &mut m {
                AnyModel::Gcn(x) => train_supervised(&g, x, &cfg)?,
                AnyModel::Gcnii(x) => train_supervised(&g, x, &cfg)?,
                AnyModel::Gin(_) => unreachable!("node architectures only"),
            };
            (m, r)
        }
    };
    model.save(&a.out)?;
    emit_report(report, &a.report, started)
}

pub(super) fn export_knowledge(a: &ExportKnowledgeArgs) -> Result<String, CliError> {
    let data = load_dataset(&a.graph)?;
    let teacher = AnyModel::load(&a.teacher)?;
    let k = match (&teacher, data) {
        (AnyModel::Gin(m), Dataset::Set(set)) => precompute_graph_knowledge(m, &set, a.student_dim)?,
        (AnyModel::Gin(_), Dataset::Graph(_)) => return Err(CliError::Config("gin teacher needs a graph set".into())),
        (m, Dataset::Graph(g)) => precompute_knowledge(m.as_node_model().expect("node architecture"), &g, a.student_dim)?,
        (_, Dataset::Set(_)) => return Err(CliError::Config("graph sets need a gin teacher".into())),
    };
    save_knowledge(&k, &a.out)?;
    let level = match k.level() {
        KnowledgeLevel::Node => "node",
        KnowledgeLevel::Graph => "graph",
    };
    Ok(format!(
        "knowledge level={level} rows={} dim={} classes={} graphs={}\n",
        k.num_rows(),
        k.dim(),
        k.num_classes(),
        k.num_graphs()
    ))
}

pub(super) fn distill(a: &DistillArgs) -> Result<String, CliError> {
    let started = Instant::now();
    let data = load_dataset(&a.graph)?;
    let knowledge = load_knowledge(&a.knowledge)?;
    let seed = a.common.seed;
    let hidden = a.hidden.unwrap_or(knowledge.dim());
    let cfg = DistillConfig {
        mode: a.mode,
        k: a.k,
        epochs: a.epochs.unwrap_or(300),
        lr: a.lr,
        disc_lr: a.disc_lr,
        task_loss_weight: a.task_weight,
        kd_temperature: a.temperature,
        seed,
        plain: a.plain,
        non_saturating: a.non_saturating,
    };
    cfg.validate()?;
    let classes = knowledge.num_classes();
    let mut ident_e = RepIdentifier::new(hidden)?;
    let mut ident_l = LogitIdentifier::new(classes, a.dl_blocks, seed.wrapping_add(1))?;
    let (student, mut report) = match data {
        Dataset::Set(set) => {
            if !matches!(a.arch, None | Some(Arch::Gin)) {
                return Err(CliError::Config("graph sets need a gin student".into()));
            }
            let mut m = GinModel::new(set.feature_dim(), hidden, set.num_classes(), a.layers, seed)?;
            let r = train_graph_level(&set, &knowledge, &mut m, &mut ident_e, &mut ident_l, &cfg)?;
            (AnyModel::Gin(m), r)
        }
        Dataset::Graph(g) => {
            let arch = a.arch.unwrap_or(Arch::Gcn);
            let mut m = build_node_model(arch, &g, hidden, a.layers, 0.1, 0.5, seed)?;
            let r = match &mut m {
                AnyModel::Gcn(x) => train_node_level(&g, &knowledge, x, &mut ident_e, &mut ident_l, &cfg)?,
                AnyModel::Gcnii(x) => train_node_level(&g, &knowledge, x, &mut ident_e, &mut ident_l, &cfg)?,
                AnyModel::Gin(_) => unreachable!("node architectures only"),
            };
            (m, r)
        }
    };
    if let Some(path) = &a.teacher {
        report.summary.params_teacher = Some(count_params(AnyModel::load(path)?.params()));
    }
    student.save(&a.out)?;
    emit_report(report, &a.report, started)
}

fn split_rows(splits: &[Split], which: EvalSplit) -> Vec<usize> {
    let want = match which {
        EvalSplit::Train => Some(Split::Train),
        EvalSplit::Val => Some(Split::Val),
        EvalSplit::Test => Some(Split::Test),
        EvalSplit::All => None,
    };
    (0..splits.len()).filter(|&i| want.is_none_or(|w| splits[i] == w)).collect()
}

fn binary_auc(logits: &DenseMatrix, labels: &[usize], rows: &[usize]) -> Result<f64, CliError> {
    if logits.cols() != 2 {
        return Err(CliError::Metric(format!("roc-auc needs 2 classes, model has {}", logits.cols())));
    }
    let probs = softmax_rows(logits);
    let scores: Vec<f64> = rows.iter().map(|&r| probs.get(r, 1) as f64).collect();
    let truth: Vec<bool> = rows.iter().map(|&r| labels[r] == 1).collect();
    Ok(roc_auc(&scores, &truth)?)
}

fn metric_label(m: MetricName) -> &'static str {
    match m {
        MetricName::Accuracy => "accuracy",
        MetricName::F1Micro => "f1_micro",
        MetricName::RocAuc => "roc_auc",
        MetricName::Silhouette => "silhouette",
    }
}

/// Metrics on the chosen rows of one labelled output.
fn evaluate_rows(
    metrics: &[MetricName],
    logits: &DenseMatrix,
    embeddings: &DenseMatrix,
    labels: &Labels,
    rows: &[usize],
) -> Result<Vec<EvalResult>, CliError> {
    let mut out = Vec::with_capacity(metrics.len());
    for &m in metrics {
        let value = match (m, labels) {
            (MetricName::F1Micro, Labels::Multi(truth)) => {
                let pred = threshold_multilabel(logits);
                let p = Labels::Multi(rows.iter().map(|&r| pred[r].clone()).collect());
                let t = Labels::Multi(rows.iter().map(|&r| truth[r].clone()).collect());
                f1_micro(&p, &t)?
            }
            (_, Labels::Multi(_)) => {
                return Err(CliError::Config(format!("{} needs single-label targets", metric_label(m))));
            }
            (MetricName::Accuracy | MetricName::F1Micro, Labels::Single(y)) => {
                let pred = logits.argmax_rows();
                let p: Vec<usize> = rows.iter().map(|&r| pred[r]).collect();
                let t: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
                if m == MetricName::Accuracy {
                    accuracy(&p, &t)?
                } else {
                    f1_micro(&Labels::Single(p), &Labels::Single(t))?
                }
            }
            (MetricName::RocAuc, Labels::Single(y)) => binary_auc(logits, y, rows)?,
            (MetricName::Silhouette, Labels::Single(y)) => {
                let t: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
                silhouette(&embeddings.select_rows(rows)?, &t)?
            }
        };
        out.push(EvalResult {
            metric: metric_label(m).to_string(),
            value,
            count: rows.len(),
        });
    }
    Ok(out)
}

pub(super) fn eval(a: &EvalArgs) -> Result<String, CliError> {
    let data = load_dataset(&a.graph)?;
    let model = AnyModel::load(&a.model)?;
    let results = match (&model, data) {
        (AnyModel::Gin(m), Dataset::Set(set)) => {
            let mut zs = Vec::with_capacity(set.len());
            let mut ss = Vec::with_capacity(set.len());
            for g in set.graphs() {
                let (_, s, z) = m.forward_values(g)?;
                ss.push(s);
                zs.push(z);
            }
            let z = DenseMatrix::vstack(&zs.iter().collect::<Vec<_>>())?;
            let s = DenseMatrix::vstack(&ss.iter().collect::<Vec<_>>())?;
            let metrics = if a.metric.is_empty() {
                if set.num_classes() == 2 {
                    vec![MetricName::RocAuc, MetricName::Accuracy]
                } else {
                    vec![MetricName::Accuracy]
                }
            } else {
                a.metric.clone()
            };
            let rows = split_rows(set.splits(), a.split);
            evaluate_rows(&metrics, &z, &s, &Labels::Single(set.labels().to_vec()), &rows)?
        }
        (m, Dataset::Graph(g)) => {
            let node = m
                .as_node_model()
                .ok_or_else(|| CliError::Config("gin models need a graph set".into()))?;
            let (h, z) = node_forward_values(node, &gcn_normalize(&g), g.features())?;
            let metrics = if !a.metric.is_empty() {
                a.metric.clone()
            } else if g.labels().is_multilabel() {
                vec![MetricName::F1Micro]
            } else {
                vec![MetricName::Accuracy, MetricName::F1Micro]
            };
            let rows = split_rows(g.splits(), a.split);
            evaluate_rows(&metrics, &z, &h, g.labels(), &rows)?
        }
        (_, Dataset::Set(_)) => return Err(CliError::Config("graph sets need a gin model".into())),
    };
    let mut out = String::new();
    for r in results {
        writeln!(out, "{r}").expect("writing to a string");
    }
    Ok(out)
}

fn label_token(labels: &Labels, v: usize) -> String {
    match labels {
        Labels::Single(y) => y[v].to_string(),
        Labels::Multi(rows) => {
            let on: Vec<String> = rows[v]
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(c, _)| c.to_string())
                .collect();
            if on.is_empty() {
                "-".to_string()
            } else {
                on.join(",")
            }
        }
    }
}

/// One line per row: 9-significant-digit values followed by a label token.
pub fn format_embeddings(h: &DenseMatrix, labels: &[String]) -> String {
    let mut out = String::new();
    for (r, label) in labels.iter().enumerate().take(h.rows()) {
        for &v in h.row(r) {
            out.push_str(&fmt_value(v));
            out.push(' ');
        }
        out.push_str(label);
        out.push('\n');
    }
    out
}

/// Inverse of [`format_embeddings`].
pub fn parse_embeddings(text: &str) -> Result<(DenseMatrix, Vec<String>), CliError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (label, values) = toks.split_last().expect("non-empty line");
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(CliError::Parse(format!("embedding line {}: ragged row", i + 1)));
        }
        for t in values {
            data.push(
                t.parse::<f32>()
                    .map_err(|_| CliError::Parse(format!("embedding line {}: bad value {t:?}", i + 1)))?,
            );
        }
        labels.push(label.to_string());
    }
    let m = DenseMatrix::from_vec(labels.len(), width.unwrap_or(0), data)?;
    Ok((m, labels))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub(super) fn export_embeddings(a: &ExportEmbeddingsArgs) -> Result<String, CliError> {
    let data = load_dataset(&a.graph)?;
    let model = AnyModel::load(&a.model)?;
    let (h, labels) = match (&model, data) {
        (AnyModel::Gin(m), Dataset::Set(set)) => {
            let mut hs = Vec::with_capacity(set.len());
            let mut labels = Vec::with_capacity(set.total_nodes());
            for (g, &y) in set.graphs().iter().zip(set.labels()) {
                let (h, _, _) = m.forward_values(g)?;
                labels.extend(std::iter::repeat_n(y.to_string(), h.rows()));
                hs.push(h);
            }
            (DenseMatrix::vstack(&hs.iter().collect::<Vec<_>>())?, labels)
        }
        (m, Dataset::Graph(g)) => {
            let node = m
                .as_node_model()
                .ok_or_else(|| CliError::Config("gin models need a graph set".into()))?;
            let (h, _) = node_forward_values(node, &gcn_normalize(&g), g.features())?;
            let labels = (0..g.num_nodes()).map(|v| label_token(g.labels(), v)).collect();
            (h, labels)
        }
        (_, Dataset::Set(_)) => return Err(CliError::Config("graph sets need a gin model".into())),
    };
    write_text(&a.out, &format_embeddings(&h, &labels))?;
    Ok(format!("embeddings rows={} dim={}\n", h.rows(), h.cols()))
}
