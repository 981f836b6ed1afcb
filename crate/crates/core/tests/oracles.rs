use astro_float::{BigFloat, Consts, RoundingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use floorlevel::altimetry::pressure_to_height;
use floorlevel::io_classifier::bce_loss;
use floorlevel::sensor_data::magnet_total;

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PREC)
}

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().unwrap()
}

#[test]
fn magnet_total_matches_high_precision() {
    for (x, y, z) in [(1015.2, 0.1, 0.1), (3.0, 4.0, 12.0), (-22.5, 41.75, -0.003)] {
        let s = big(x)
            .mul(&big(x), PREC, RM)
            .add(&big(y).mul(&big(y), PREC, RM), PREC, RM)
            .add(&big(z).mul(&big(z), PREC, RM), PREC, RM);
        let want = to_f64(&s.sqrt(PREC, RM));
        let got = magnet_total(x, y, z).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }
    assert_eq!(magnet_total(3.0, 4.0, 12.0).unwrap(), 13.0);
    assert!(magnet_total(f64::NAN, 0.0, 0.0).is_err());
}

#[test]
fn one_floor_of_pressure_change() {
    let mut cc = Consts::new().unwrap();
    let e = BigFloat::from_u64(200, PREC).div(&BigFloat::from_u64(1051, PREC), PREC, RM);
    let r = big(996.0)
        .div(&big(1000.0), PREC, RM)
        .pow(&e, PREC, RM, &mut cc);
    let want = to_f64(&BigFloat::from_u64(44330, PREC).mul(
        &BigFloat::from_u64(1, PREC).sub(&r, PREC, RM),
        PREC,
        RM,
    ));
    let got = pressure_to_height(1000.0, 996.0).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    assert!((got - 33.7979).abs() < 1e-4);
    assert!(pressure_to_height(0.0, 1000.0).is_err());
    assert!(pressure_to_height(1000.0, -1.0).is_err());
}

#[test]
fn bce_matches_high_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut cc = Consts::new().unwrap();
    let y: Vec<f64> = (0..64).map(|i| (i % 2) as f64).collect();
    let p: Vec<f64> = (0..64).map(|_| rng.gen_range(0.001..0.999)).collect();
    let mut sum = BigFloat::from_u64(0, PREC);
    for (yi, pi) in y.iter().zip(&p) {
        let q = if *yi == 1.0 {
            big(*pi)
        } else {
            BigFloat::from_u64(1, PREC).sub(&big(*pi), PREC, RM)
        };
        sum = sum.sub(&q.ln(PREC, RM, &mut cc), PREC, RM);
    }
    let want = to_f64(&sum.div(&BigFloat::from_u64(64, PREC), PREC, RM));
    let got = bce_loss(&y, &p).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!(bce_loss(&[1.0], &[0.0]).unwrap().is_finite());
    assert!(bce_loss(&[1.0, 0.0], &[0.5]).is_err());
}
