//! Reference protocols used by the tests, the acceptance suite and the CLI.

use crate::protocol::{EdgeRate, Piece, RateProtocol, ValidatedProtocol, DEFAULT_VALIDATION_GRID};

fn build(p: RateProtocol) -> ValidatedProtocol {
    p.into_validated(DEFAULT_VALIDATION_GRID)
        .expect("reference protocol is valid")
}

fn pieces(spec: &[(f64, f64, f64)]) -> Vec<Piece> {
    spec.iter()
        .map(|&(start, end, value)| Piece { start, end, value })
        .collect()
}

/// Two states, `k12 = 1`, `k21 = 2`, `T = 1`.
pub fn p1() -> ValidatedProtocol {
    build(
        RateProtocol::new(
            2,
            1.0,
            vec![((0, 1), EdgeRate::constant(1.0)), ((1, 0), EdgeRate::constant(2.0))],
            "P1: homogeneous two-state chain",
        )
        .unwrap(),
    )
}

/// Directed three-state ring, clockwise rate `p`, counter-clockwise rate `q`, `T = 1`.
pub fn ring(p: f64, q: f64) -> ValidatedProtocol {
    ring_labelled(p, q, format!("ring p={p} q={q}"))
}

fn ring_labelled(p: f64, q: f64, description: String) -> ValidatedProtocol {
    let mut edges = Vec::new();
    for i in 0..3 {
        edges.push(((i, (i + 1) % 3), EdgeRate::constant(p)));
        edges.push((((i + 1) % 3, i), EdgeRate::constant(q)));
    }
    build(RateProtocol::new(3, 1.0, edges, description).unwrap())
}

/// Ring with `p = 2`, `q = 1`.
pub fn p2() -> ValidatedProtocol {
    ring_labelled(2.0, 1.0, "P2: driven three-state ring".into())
}

/// Two states, `k12 = 1 + 0.5 cos(2 pi t)`, `k21 = 1`, `T = 1`.
pub fn p3() -> ValidatedProtocol {
    build(
        RateProtocol::new(
            2,
            1.0,
            vec![
                ((0, 1), EdgeRate::fourier(1.0, vec![0.5], vec![])),
                ((1, 0), EdgeRate::constant(1.0)),
            ],
            "P3: cosine-driven two-state chain",
        )
        .unwrap(),
    )
}

/// Two states, `k12 = 1 + 0.5 sin(2 pi t)`, `k21 = 1`, `T = 1`.
pub fn p3_sine() -> ValidatedProtocol {
    build(
        RateProtocol::new(
            2,
            1.0,
            vec![
                ((0, 1), EdgeRate::fourier(1.0, vec![], vec![0.5])),
                ((1, 0), EdgeRate::constant(1.0)),
            ],
            "P3 sine variant",
        )
        .unwrap(),
    )
}

/// Three states with smoothed piecewise-constant rates on several edges.
pub fn piecewise_three_state() -> ValidatedProtocol {
    let w = Some(0.02);
    build(
        RateProtocol::new(
            3,
            1.0,
            vec![
                (
                    (0, 1),
                    EdgeRate::Piecewise { pieces: pieces(&[(0.0, 0.4, 1.0), (0.4, 1.0, 3.0)]), width: w },
                ),
                ((1, 0), EdgeRate::constant(1.0)),
                (
                    (1, 2),
                    EdgeRate::Piecewise { pieces: pieces(&[(0.0, 0.6, 2.0), (0.6, 1.0, 0.5)]), width: w },
                ),
                ((2, 1), EdgeRate::constant(1.5)),
                ((2, 0), EdgeRate::constant(1.0)),
                (
                    (0, 2),
                    EdgeRate::Piecewise { pieces: pieces(&[(0.0, 0.3, 0.5), (0.3, 1.0, 2.0)]), width: w },
                ),
            ],
            "smoothed piecewise-constant three-state protocol",
        )
        .unwrap(),
    )
}

/// Two-state protocol whose rates vanish on `[0, T/2]`.
pub fn half_period_shutdown() -> RateProtocol {
    let shape = || EdgeRate::Piecewise {
        pieces: pieces(&[(0.0, 0.55, 0.0), (0.55, 0.95, 1.0), (0.95, 1.0, 0.0)]),
        width: Some(0.02),
    };
    RateProtocol::new(
        2,
        1.0,
        vec![((0, 1), shape()), ((1, 0), shape())],
        "rates vanish on the first half period",
    )
    .unwrap()
}

/// The four protocols covered by the acceptance suite, by name.
pub fn shipped() -> Vec<(&'static str, ValidatedProtocol)> {
    vec![("P1", p1()), ("P2", p2()), ("P3", p3()), ("P3-sine", p3_sine())]
}

/// Looks up a reference protocol by name.
pub fn by_name(name: &str) -> Option<ValidatedProtocol> {
    match name.to_ascii_lowercase().as_str() {
        "p1" => Some(p1()),
        "p2" => Some(p2()),
        "p3" => Some(p3()),
        "p3-sine" | "p3_sine" => Some(p3_sine()),
        "piecewise" => Some(piecewise_three_state()),
        _ => None,
    }
}
