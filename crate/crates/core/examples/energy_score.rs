//! Monte-Carlo energy score of a sample cloud against an observation, and
//! how it moves as the cloud shifts and spreads.

use envae::losses::energy_score_values;
use envae::random::{sample_standard_normal, Rng};
use envae::tensor::Tensor;

fn main() -> envae::Result<()> {
    let m = 200;
    let base = sample_standard_normal(&mut Rng::new(0), &[m, 1, 2])?.into_tensor();
    let x = Tensor::new(vec![1, 2], vec![0.0, 0.0])?;

    println!("shift  scale   beta=1   beta=2");
    for shift in [0.0, 1.0, 3.0] {
        for scale in [0.1, 1.0, 3.0] {
            let cloud = base.map(|v| shift + scale * v);
            let s1 = energy_score_values(&cloud, &x, 1.0)?[0];
            let s2 = energy_score_values(&cloud, &x, 2.0)?[0];
            println!("{shift:5.1}  {scale:5.1}  {s1:7.4}  {s2:7.4}");
        }
    }
    Ok(())
}
