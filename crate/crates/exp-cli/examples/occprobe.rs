//! Throwaway diagnostic: signed occupancy bias of a multi-user checkpoint.

use std::path::Path;

fn main() {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().expect("usage: occprobe <ckpt> <manifest>");
    let manifest = args.next().expect("usage: occprobe <ckpt> <manifest>");

    let ds = csi_core::load_dataset(Path::new(&manifest)).unwrap();
    let samples = ds.to_samples().unwrap();
    let (arch, stack, store, _) = train_adapt::load_mu(Path::new(&ckpt)).unwrap();

    let feats: Vec<&ndarray::Array3<f64>> = samples.iter().map(|s| &s.features).collect();
    let probs = stack.slot_probs(&store, &feats).unwrap();

    let k = arch.classes - 1;
    let mut mass_np = 0.0;
    let mut n_slots = 0.0;
    let mut pred_count_sum = 0.0;
    let mut true_count_sum = 0.0;
    let mut over = 0usize;
    let mut under = 0usize;
    let mut pred_hist = vec![0usize; arch.slots + 1];
    let mut true_hist = vec![0usize; arch.slots + 1];
    for (p, s) in probs.iter().zip(&samples) {
        let mut pred_occ = 0usize;
        for row in p.outer_iter() {
            mass_np += row[k];
            n_slots += 1.0;
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if arg != k {
                pred_occ += 1;
            }
        }
        let t = s.labels.occupancy();
        pred_hist[pred_occ] += 1;
        true_hist[t] += 1;
        pred_count_sum += pred_occ as f64;
        true_count_sum += t as f64;
        if pred_occ > t {
            over += 1;
        }
        if pred_occ < t {
            under += 1;
        }
    }
    let n = samples.len() as f64;
    println!("mean p(no-person)      {:.4}", mass_np / n_slots);
    println!("mean predicted count   {:.4}", pred_count_sum / n);
    println!("mean true count        {:.4}", true_count_sum / n);
    println!("over-count samples     {over}");
    println!("under-count samples    {under}");
    println!("pred count histogram   {pred_hist:?}");
    println!("true count histogram   {true_hist:?}");
}
