// scratch: dump analytic vs central-difference grads for pCE w.r.t. conv1 weights
use clickseg::losses::{partial_cross_entropy, ClickMap};
use clickseg::nets::{build, Role};
use clickseg::tensor::Tensor;
use rand::Rng; use rand::SeedableRng; use rand_chacha::ChaCha8Rng;

fn kink_free(seed: u64) -> clickseg::nets::SegNet {
    let net = build(Role::Student, 4, 3, seed).unwrap();
    for p in net.params() {
        let positive: Vec<f32> = if p.shape().len() == 4 {
            p.data().iter().map(|v| (v.abs() / 3.0).max(0.01)).collect()
        } else {
            p.data().iter().map(|v| v.abs().max(0.05)).collect()
        };
        p.with_data_mut(|d| d.copy_from_slice(&positive));
    }
    net
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let frame = Tensor::from_vec(&[1,3,8,8],(0..192).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let clicks = {
        let mut labels = vec![-1i32; 64];
        let mut mask = vec![0u8; 64];
        for (i, p) in (0..64).step_by(5).enumerate() { labels[p] = (i % 3) as i32; mask[p] = 1; }
        ClickMap::new(labels, mask, 8, 8).unwrap()
    };
    let loss_of = |net: &clickseg::nets::SegNet| {
        let p = net.forward(&frame).unwrap();
        partial_cross_entropy(&p, &clicks).unwrap()
    };
    let pi = 0;
    // analytic
    let base_net = kink_free(1);
    let shape = base_net.params()[pi].shape().to_vec();
    let base = base_net.params()[pi].to_vec();
    let probe = Tensor::param(&shape, base.clone()).unwrap();
    {
        let mut net = kink_free(1);
        net.replace_param(pi, probe.clone()).unwrap();
        let l = loss_of(&net);
        println!("loss value = {}", l.item());
        l.backward().unwrap();
    }
    let analytic = probe.grad_or_zeros();
    // numeric
    for eps in [1e-2f32] {
        let mut worst = (0usize, 0.0f64);
        for i in 0..base.len() {
            let mut plus = base.clone(); plus[i] += eps;
            let mut minus = base.clone(); minus[i] -= eps;
            let f = |data: Vec<f32>| {
                let mut net = kink_free(1);
                net.replace_param(pi, Tensor::from_vec(&shape, data).unwrap()).unwrap();
                loss_of(&net).item() as f64
            };
            let numeric = (f(plus) - f(minus)) / (2.0 * eps as f64);
            let a = analytic[i] as f64;
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
            if err > worst.1 { worst = (i, err); }
            if err > 5e-3 {
                println!("elem {i}: base={:+.4} analytic={a:+.6e} numeric={numeric:+.6e} err={err:.3}", base[i]);
            }
        }
        println!("eps {eps}: worst elem {} err {:.4}", worst.0, worst.1);
    }
}
