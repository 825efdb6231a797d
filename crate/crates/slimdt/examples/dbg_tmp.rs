use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slimdt::numerics::{Tape, TensorId};

const B: usize = 1;
const K: usize = 6;
const H: usize = 16;

fn leaf(tape: &mut Tape, rng: &mut ChaCha8Rng, shape: &[usize]) -> TensorId {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    tape.leaf(data, shape, false)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rtg: Vec<f64> = (0..B * K).map(|_| rng.sample(StandardNormal)).collect();
    let states: Vec<f64> = (0..B * K * H).map(|_| rng.sample(StandardNormal)).collect();

    let mut tape = Tape::new(0);
    let mut prng = ChaCha8Rng::seed_from_u64(42);
    let rtg_id = tape.constant(rtg.clone(), &[B, K, 1]);
    let s_id = tape.constant(states.clone(), &[B, K, H]);
    let er_w = leaf(&mut tape, &mut prng, &[1, H]);
    let er_b = leaf(&mut tape, &mut prng, &[H]);
    let wq = leaf(&mut tape, &mut prng, &[H, H]);
    let bq = leaf(&mut tape, &mut prng, &[H]);
    let wk = leaf(&mut tape, &mut prng, &[H, H]);
    let bk = leaf(&mut tape, &mut prng, &[H]);

    // q from rtg, k from states (the q_to_kv wiring)
    let er = tape.linear(rtg_id, er_w, er_b);
    let q = tape.linear(er, wq, bq);
    let k = tape.linear(s_id, wk, bk);
    let scores = tape.bmm(q, k, true);
    println!("er row0: {:?}", &tape.data(er)[..4]);
    println!("er row1: {:?}", &tape.data(er)[H..H + 4]);
    println!("q  row0: {:?}", &tape.data(q)[..4]);
    println!("q  row1: {:?}", &tape.data(q)[H..H + 4]);
    println!("k  row0: {:?}", &tape.data(k)[..4]);
    println!("k  row1: {:?}", &tape.data(k)[H..H + 4]);
    println!("scores row0: {:?}", &tape.data(scores)[..6]);
    println!("scores row1: {:?}", &tape.data(scores)[6..12]);
}
