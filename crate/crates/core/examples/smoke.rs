use arhmm::decode::{align_labels, viterbi};
use arhmm::em::{forward_backward, fit, FitConfig, ImputationMode, InitStrategy};
use arhmm::simulate::{apply_mar_missingness, generate_dataset, DgpConfig};

fn main() {
    let config = DgpConfig::two_state(42);
    let complete = generate_dataset(&config).unwrap();
    let masked = apply_mar_missingness(&complete, &config.missing, 7).unwrap();
    let truth = complete.latent_truth.as_ref().unwrap();

    // decode with the TRUE parameters on the COMPLETE data
    let y_full = complete.y.clone();
    let path = viterbi(&config.spec, &config.params, &complete, &y_full).unwrap();
    let al = align_labels(&path.states, truth, 2).unwrap();
    println!("viterbi truth-params complete-data accuracy = {:.4}", al.accuracy);

    let post = forward_backward(&config.spec, &config.params, &complete, &y_full).unwrap();
    println!("loglik at truth on complete data = {:.3}", post.log_likelihood);
    // gamma-argmax accuracy
    let gpath: Vec<usize> = post.gamma.iter().map(|row| if row[1] > row[0] {1} else {0}).collect();
    let gal = align_labels(&gpath, truth, 2).unwrap();
    println!("gamma-argmax accuracy = {:.4}", gal.accuracy);

    // EM warm-started AT the truth on complete data
    let fc = FitConfig { init: InitStrategy::Warm(Box::new(config.params.clone())), ..FitConfig::with_mode(ImputationMode::Single, 1) };
    let fr = fit(&config.spec, &complete, &fc).unwrap();
    println!("warm-from-truth: iters={} ll_first={:.3} ll_last={:.3}", fr.iterations,
        fr.loglik_trace.first().unwrap(), fr.loglik_trace.last().unwrap());
    let path2 = viterbi(&config.spec, &fr.params, &complete, &fr.y_imputed).unwrap();
    let al2 = align_labels(&path2.states, truth, 2).unwrap();
    let ap = fr.params.permute_states(&al2.permutation);
    println!("warm-from-truth accuracy={:.4} beta3=({:.3},{:.3})", al2.accuracy,
        ap.outcome.exposure.at(0), ap.outcome.exposure.at(1));
}
