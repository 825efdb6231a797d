//! Tour of the six condition injectors: which positions each one couples,
//! and what it costs.
//!
//! A perturbation probe makes the point-to-point vs sequence-to-sequence
//! split visible: move the return at one step and watch which output
//! positions react.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use slimdt::inject::{self, injector_flops, InjectorKind, ALL_KINDS};
use slimdt::numerics::{Tape, TensorId};

const B: usize = 1;
const K: usize = 6;
const H: usize = 16;

fn leaf(tape: &mut Tape, rng: &mut ChaCha8Rng, shape: &[usize]) -> TensorId {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    tape.leaf(data, shape, false)
}

/// Runs one injector kind and returns its output buffer.
fn run(kind: InjectorKind, rtg: &[f64], states: &[f64], causal: bool) -> Vec<f64> {
    let mut tape = Tape::new(0);
    let mut prng = ChaCha8Rng::seed_from_u64(42);
    let rtg_id = tape.constant(rtg.to_vec(), &[B, K, 1]);
    let s_id = tape.constant(states.to_vec(), &[B, K, H]);
    let pad = vec![true; B * K];
    let out = match kind {
        InjectorKind::Concat => {
            let p = inject::ConcatParams {
                er_w: leaf(&mut tape, &mut prng, &[1, H / 2]),
                er_b: leaf(&mut tape, &mut prng, &[H / 2]),
                enc_w: leaf(&mut tape, &mut prng, &[H / 2 + H, H]),
                enc_b: leaf(&mut tape, &mut prng, &[H]),
            };
            inject::inject_concat(&mut tape, &p, rtg_id, s_id)
        }
        InjectorKind::Adaln => {
            let p = inject::AdalnParams {
                er_w: leaf(&mut tape, &mut prng, &[1, H]),
                er_b: leaf(&mut tape, &mut prng, &[H]),
                mod_w: leaf(&mut tape, &mut prng, &[H, 2 * H]),
                mod_b: leaf(&mut tape, &mut prng, &[2 * H]),
            };
            inject::inject_adaln(&mut tape, &p, rtg_id, s_id, 1e-5)
        }
        _ => {
            let p = inject::CrossAttnParams {
                er_w: leaf(&mut tape, &mut prng, &[1, H]),
                er_b: leaf(&mut tape, &mut prng, &[H]),
                wq: leaf(&mut tape, &mut prng, &[H, H]),
                bq: leaf(&mut tape, &mut prng, &[H]),
                wk: leaf(&mut tape, &mut prng, &[H, H]),
                bk: leaf(&mut tape, &mut prng, &[H]),
                wv: leaf(&mut tape, &mut prng, &[H, H]),
                bv: leaf(&mut tape, &mut prng, &[H]),
                wo: leaf(&mut tape, &mut prng, &[H, H]),
                bo: leaf(&mut tape, &mut prng, &[H]),
            };
            inject::inject_cross_attn(&mut tape, &p, kind, rtg_id, s_id, &pad, causal, 1)
        }
    };
    tape.data(out).to_vec()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rtg: Vec<f64> = (0..B * K).map(|_| rng.sample(StandardNormal)).collect();
    let states: Vec<f64> = (0..B * K * H).map(|_| rng.sample(StandardNormal)).collect();

    println!("perturbing the return at step 2; '*' marks output positions that move\n");
    println!("{:<24} {:<8} coupling (positions 0..{})", "injector", "causal", K - 1);
    for kind in ALL_KINDS {
        for causal in [false, true] {
            if causal && !kind.is_cross_attention() {
                continue;
            }
            let base = run(kind, &rtg, &states, causal);
            let mut rtg2 = rtg.clone();
            rtg2[2] += 1.0;
            let moved = run(kind, &rtg2, &states, causal);
            let marks: String = (0..K)
                .map(|t| {
                    if base[t * H..(t + 1) * H] == moved[t * H..(t + 1) * H] {
                        '.'
                    } else {
                        '*'
                    }
                })
                .collect();
            println!("{:<24} {:<8} {marks}", kind.name(), causal);
        }
    }

    println!("\nper-window multiply-adds at k = 20, hidden 128:");
    println!("{:<24} {:>12} {:>14}", "injector", "linear", "k^2 terms");
    for kind in ALL_KINDS {
        let e = injector_flops(kind, 20, 128, 128, 64);
        println!("{:<24} {:>12} {:>14}", kind.name(), e.linear_macs, e.score_mix_macs);
    }
}
