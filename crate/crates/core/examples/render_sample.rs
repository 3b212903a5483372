use plotvqa::plot_synth::{render_plot, sample_plot_spec, PlotKind};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| ".".into());
    for (i, kind) in PlotKind::ALL.iter().enumerate() {
        let spec = sample_plot_spec(i as u64 + 3, *kind);
        let r = render_plot(&spec, 448, 336).expect("render");
        let path = format!("{out}/{}.png", spec.plot_id);
        r.image.save(&path).expect("save");
        println!("{path}: {} boxes", r.boxes.len());
    }
}
