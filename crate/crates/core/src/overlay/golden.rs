/// Inverse golden ratio, (√5 − 1)/2.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization of `f` on `[a, b]`.
///
/// Stops once the bracket is narrower than `tol` times its midpoint or
/// `abs_floor`, whichever is larger. Returns every probe as `(x, f(x))`;
/// equal values keep the lower end of the bracket.
pub fn golden_section_max<F, E>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
    abs_floor: f64,
    max_iter: usize,
) -> Result<Vec<(f64, f64)>, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let mut probes = Vec::new();
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    probes.push((c, fc));
    probes.push((d, fd));
    for _ in 0..max_iter {
        if b - a <= (tol * 0.5 * (a + b).abs()).max(abs_floor) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            probes.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            probes.push((d, fd));
        }
    }
    Ok(probes)
}

/// Probe with the largest value; ties go to the smaller abscissa.
pub fn best_probe(probes: &[(f64, f64)]) -> (f64, f64) {
    probes
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, p| {
            if p.1 > best.1 || (p.1 == best.1 && p.0 < best.0) {
                p
            } else {
                best
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_peak() {
        let probes =
            golden_section_max::<_, ()>(|x| Ok(-(x - 0.3) * (x - 0.3)), 0.0, 1.0, 1e-10, 0.0, 500)
                .unwrap();
        let (x, _) = best_probe(&probes);
        assert!((x - 0.3).abs() < 1e-9);
    }

    #[test]
    fn ties_prefer_lower() {
        assert_eq!(
            best_probe(&[(2.0, 1.0), (1.0, 1.0), (3.0, 0.5)]),
            (1.0, 1.0)
        );
    }
}
