use super::MetricsReport;

const HEADER: [&str; 11] = [
    "task", "train", "eval", "method", "runs", "precision", "recall", "f1", "f1_std", "tp/fp/fn", "words",
];

fn row(r: &MetricsReport) -> [String; 11] {
    let runs = r.spread.as_ref().map_or(1, |s| s.runs);
    let std = r.spread.as_ref().map_or(String::from("-"), |s| format!("{:.4}", s.f1.std));
    [
        r.task.to_string(),
        r.train_set.clone(),
        r.eval_set.clone(),
        r.method.to_string(),
        runs.to_string(),
        format!("{:.4}", r.score.precision),
        format!("{:.4}", r.score.recall),
        format!("{:.4}", r.score.f1),
        std,
        format!("{}/{}/{}", r.score.counts.tp, r.score.counts.fp, r.score.counts.fn_),
        r.score.words.to_string(),
    ]
}

/// Column-aligned plain-text table, with the class order in a header line.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let rows: Vec<[String; 11]> = reports.iter().map(row).collect();
    let mut widths: Vec<usize> = HEADER.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    if let Some(first) = reports.first() {
        out.push_str(&format!("# class_order {:?}", first.class_order));
        if let Some(h) = &first.config_hash {
            out.push_str(&format!("  config {h}"));
        }
        out.push('\n');
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
        cells
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_owned()
    };
    out.push_str(&line(&mut HEADER.iter().copied()));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(&mut r.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

pub fn render_csv(reports: &[MetricsReport]) -> String {
    let mut out = HEADER.join(",");
    out.push_str(",class_order,seeds\n");
    for r in reports {
        out.push_str(&row(r).join(","));
        let order: Vec<String> = r.class_order.iter().map(u8::to_string).collect();
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!(",{},{}\n", order.join(" "), seeds.join(" ")));
    }
    out
}
