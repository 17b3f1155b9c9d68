//! Static SVG rendering of a scene with the candidate vocabulary colored by a
//! chosen metric.

use drivesim_core::geom::Vec2;
use drivesim_core::scenario::{Scenario, SignalState};
use drivesim_core::teachers::ScoreMatrix;
use drivesim_core::vocab::Vocabulary;

const W: f64 = 1000.0;
const H: f64 = 700.0;
const MARGIN: f64 = 40.0;

struct View {
    min: Vec2,
    scale: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = Vec2>) -> View {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        let span_x = (max.x - min.x).max(1.0);
        let span_y = (max.y - min.y).max(1.0);
        let scale = ((W - 2.0 * MARGIN) / span_x).min((H - 2.0 * MARGIN) / span_y);
        View { min, scale }
    }

    fn map(&self, p: Vec2) -> (f64, f64) {
        (
            MARGIN + (p.x - self.min.x) * self.scale,
            // flip y so "left of the road" renders upward
            H - MARGIN - (p.y - self.min.y) * self.scale,
        )
    }
}

fn path_of(view: &View, points: impl Iterator<Item = Vec2>) -> String {
    let mut d = String::new();
    for (i, p) in points.enumerate() {
        let (x, y) = view.map(p);
        d.push_str(&format!("{}{x:.1} {y:.1} ", if i == 0 { "M" } else { "L" }));
    }
    d
}

fn polygon_points(view: &View, vertices: &[Vec2]) -> String {
    vertices
        .iter()
        .map(|v| {
            let (x, y) = view.map(*v);
            format!("{x:.1},{y:.1}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Linear red-to-green colormap over [0, 1].
fn color_of(score: f64) -> String {
    let s = score.clamp(0.0, 1.0);
    let r = (220.0 * (1.0 - s) + 30.0 * s) as u8;
    let g = (40.0 * (1.0 - s) + 170.0 * s) as u8;
    format!("rgb({r},{g},60)")
}

pub fn render_svg(
    scenario: &Scenario,
    vocab: &Vocabulary,
    scores: &ScoreMatrix,
    metric_col: usize,
    metric_name: &str,
) -> String {
    let view = View::fit(
        scenario
            .drivable
            .iter()
            .flat_map(|p| p.vertices().iter().copied())
            .chain(scenario.route.points().iter().copied()),
    );
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"#f7f7f5\"/>\n"
    );

    for poly in &scenario.drivable {
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#d8d8d8\" stroke=\"#b0b0b0\"/>\n",
            polygon_points(&view, poly.vertices())
        ));
    }
    for signal in &scenario.signals {
        let fill = match signal.state_at(0.0) {
            SignalState::Red => "#e08080",
            SignalState::Green => "#80c080",
        };
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.4\"/>\n",
            polygon_points(&view, signal.region.vertices()),
            fill
        ));
    }
    for lane in &scenario.lanes {
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"#909090\" stroke-dasharray=\"6 4\"/>\n",
            path_of(&view, lane.points().iter().copied())
        ));
    }
    svg.push_str(&format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"#4060c0\" stroke-width=\"2\"/>\n",
        path_of(&view, scenario.route.points().iter().copied())
    ));

    // candidates colored by the chosen metric, drawn worst-first
    let mut order: Vec<usize> = (0..vocab.k).collect();
    order.sort_by(|a, b| {
        scores.values[*a][metric_col]
            .partial_cmp(&scores.values[*b][metric_col])
            .unwrap()
    });
    for i in order {
        let score = scores.values[i][metric_col];
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1\" stroke-opacity=\"0.7\"/>\n",
            path_of(&view, vocab.trajectories[i].poses().iter().map(|p| p.position())),
            color_of(score)
        ));
    }

    // human reference in black
    svg.push_str(&format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"#101010\" stroke-width=\"2.5\"/>\n",
        path_of(&view, scenario.human.poses().iter().map(|p| p.position()))
    ));

    // agent footprints at t = 0
    for agent in &scenario.agents {
        let corners = agent.box_at(0).corners();
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#d08030\" fill-opacity=\"0.8\"/>\n",
            polygon_points(&view, &corners)
        ));
    }
    // ego footprint
    let ego = scenario.ego.box_at(scenario.ego.pose).corners();
    svg.push_str(&format!(
        "<polygon points=\"{}\" fill=\"#3050a0\"/>\n",
        polygon_points(&view, &ego)
    ));

    // legend
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">{} of {} candidates \
         (red = 0, green = 1); black = human; blue = ego</text>\n",
        MARGIN, metric_name, vocab.k
    ));
    svg.push_str("</svg>\n");
    svg
}
