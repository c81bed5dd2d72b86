//! Finite-difference check of the full training loss on the micro model,
//! plus a few primitives on their own.
//!
//! `cargo run --release --example gradcheck_micro`

use cropmae::model::{forward_train, LossScope, ModelConfig, ModelParams, Network};
use cropmae::numerics::{finite_diff_check, NumericsError, Rng, Tensor, Var};
use cropmae::views::{generate_view_pair, AugmentConfig, Image, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::new(1, 0);
    let x = Tensor::<f64>::from_fn(&[3, 4], |_| rng.normal());
    let prims: [(&str, fn(Var<'_, f64>) -> Result<Var<'_, f64>, NumericsError>); 3] = [
        ("softmax", |v| Ok(v.softmax(1)?.mul(&v)?.sum())),
        ("matmul", |v| Ok(v.matmul(&v.transpose()?)?.mul(&v.matmul(&v.transpose()?)?)?.sum())),
        ("gelu", |v| Ok(v.gelu().mul(&v)?.sum())),
    ];
    for (name, f) in prims {
        println!("{name:<8} max rel err {:.2e}", finite_diff_check(|_, v| f(v), &x, 1e-5)?);
    }

    let cfg = ModelConfig::micro();
    let init = ModelParams::<f64>::init(cfg, 11)?;
    // At the default init scale some gradients sit below finite-difference
    // roundoff; tripling the weights lifts them clear of it.
    let params = ModelParams::from_weights(cfg, init.weights.map(&mut |_, t| t.map(|v| v * 3.0)))?;
    let aug = AugmentConfig {
        output_size: cfg.patch.image_size,
        ..AugmentConfig::default()
    };
    let source = Image::from_fn(16, 16, |_, _| [0; 3].map(|_| rng.uniform() as f32));
    let pair = generate_view_pair(&source, Strategy::GlobalToLocal, &aug, &mut rng)?;

    // Every weight in one flat vector, so one check covers the whole model.
    let named = params.weights.named();
    let shapes: Vec<Vec<usize>> = named.iter().map(|(_, t)| t.shape().to_vec()).collect();
    let flat: Vec<f64> = named.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    let flat = Tensor::new(&[flat.len()], flat)?;
    println!("micro model: {} parameters", flat.numel());

    let err = finite_diff_check(
        |tape, x| {
            let mut off = 0;
            let mut leaves = Vec::new();
            for s in &shapes {
                let n: usize = s.iter().product();
                leaves.push(x.narrow(0, off, n)?.reshape(s)?);
                off += n;
            }
            let weights = params.weights.rebuild(leaves).map_err(|e| NumericsError::Contract(e.to_string()))?;
            let net = Network::new(cfg, weights, tape.constant(params.enc_pos.clone()), tape.constant(params.dec_pos.clone()));
            forward_train(&net, &pair, 0.5, LossScope::MaskedOnly, &mut Rng::new(5, 5), true)
                .map(|(loss, _)| loss)
                .map_err(|e| NumericsError::Contract(e.to_string()))
        },
        &flat,
        1e-5,
    )?;
    println!("end-to-end loss: max rel err {err:.2e} ({})", if err <= 1e-3 { "ok" } else { "FAIL" });
    Ok(())
}
