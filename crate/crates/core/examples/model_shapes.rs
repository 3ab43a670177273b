// Layer-by-layer extents of the default generator and discriminator,
// then one inference pass on a random control cube.

use spreadcast::model::{default_arch, generate, init_params, trainable_count};
use spreadcast::numerics::{RngStream, Tensor};
use spreadcast::Result;

pub struct Shapes {
    pub output: [usize; 4],
    pub disc_logits: [usize; 4],
    pub generator_params: usize,
    pub discriminator_params: usize,
}

pub fn run(input: [usize; 4], print: bool) -> Result<Shapes> {
    let arch = default_arch(input)?;
    let shapes = arch.validate()?;
    if print {
        for (i, (a, b)) in shapes
            .encoder_in
            .iter()
            .zip(&shapes.encoder_out)
            .enumerate()
        {
            println!("enc{i}  {a:?} -> {b:?}");
        }
        for (i, (a, b)) in shapes
            .decoder_in
            .iter()
            .zip(&shapes.decoder_out)
            .enumerate()
        {
            println!("dec{i}  {a:?} -> {b:?}");
        }
        println!("out   {:?} -> {:?}", shapes.output_in, shapes.output);
        println!("disc  {:?} -> {:?}", shapes.disc_in[0], shapes.disc_logits);
    }
    let params = init_params(&arch, &RngStream::new(0, 0))?;
    let mut rng = RngStream::new(1, 0);
    let n: usize = input.iter().product();
    let x = Tensor::new(
        [1, input[0], input[1], input[2], input[3]],
        rng.fill_normal(n).into_iter().map(|v| v as f32).collect(),
    )?;
    let y = generate(&params, &arch, &x, false, &rng)?;
    Ok(Shapes {
        output: [y.shape()[1], y.shape()[2], y.shape()[3], y.shape()[4]],
        disc_logits: shapes.disc_logits,
        generator_params: trainable_count(&params, "gen."),
        discriminator_params: trainable_count(&params, "disc."),
    })
}

fn main() -> Result<()> {
    let s = run([16, 64, 128, 1], true)?;
    println!(
        "generator output {:?}, {} generator and {} discriminator weights",
        s.output, s.generator_params, s.discriminator_params
    );
    Ok(())
}
