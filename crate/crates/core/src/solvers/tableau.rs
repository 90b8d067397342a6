//! Butcher tableaus of the explicit Runge-Kutta methods.

/// An explicit Runge-Kutta method, optionally with an embedded error estimate.
#[derive(Debug, PartialEq)]
pub struct Tableau {
    pub name: &'static str,
    pub c: &'static [f64],
    /// Strictly lower-triangular coefficients; row `s` has `s` entries.
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
    /// `b - b̂`, the weights of the local error estimate.
    pub btilde: Option<&'static [f64]>,
    /// Order of the propagated solution.
    pub order: u32,
    /// The last stage is evaluated at the new solution (first same as last).
    pub fsal: bool,
}

impl Tableau {
    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// Number of stages a step needs when no error estimate is wanted.
    pub fn propagation_stages(&self) -> usize {
        self.b.iter().rposition(|&x| x != 0.0).map_or(0, |i| i + 1)
    }
}

pub static RK4: Tableau = Tableau {
    name: "rk4",
    c: &[0.0, 0.5, 0.5, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    btilde: None,
    order: 4,
    fsal: false,
};

/// Tsitouras' 5(4) pair.
pub static TSIT5: Tableau = Tableau {
    name: "tsit5",
    c: &[0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0],
    a: &[
        &[],
        &[0.161],
        &[-0.008480655492356989, 0.335480655492357],
        &[2.897153057105493, -6.359448489975075, 4.3622954328695815],
        &[
            5.325864828439257,
            -11.748883564062828,
            7.4955393428898365,
            -0.09249506636175525,
        ],
        &[
            5.86145544294642,
            -12.92096931784711,
            8.159367898576159,
            -0.071584973281401,
            -0.028269050394068383,
        ],
        &[
            0.09646076681806523,
            0.01,
            0.4798896504144996,
            1.379008574103742,
            -3.290069515436081,
            2.324710524099774,
        ],
    ],
    b: &[
        0.09646076681806523,
        0.01,
        0.4798896504144996,
        1.379008574103742,
        -3.290069515436081,
        2.324710524099774,
        0.0,
    ],
    btilde: Some(&[
        -0.001_780_011_052_225_777,
        -0.0008164344596567469,
        0.007880878010261995,
        -0.1447110071732629,
        0.5823571654525552,
        -0.45808210592918697,
        1.0 / 66.0,
    ]),
    order: 5,
    fsal: true,
};

#[cfg(test)]
mod tests {
    use super::*;

    fn check_rows(t: &Tableau) {
        for (s, row) in t.a.iter().enumerate() {
            assert_eq!(row.len(), s);
            let sum: f64 = row.iter().sum();
            assert!((sum - t.c[s]).abs() < 1e-13, "{} row {s}", t.name);
        }
    }

    /// Order conditions up to order four, checked directly from the coefficients.
    fn check_order4(b: &[f64], t: &Tableau) {
        let c = t.c;
        let n = b.len();
        let ac: Vec<f64> = (0..n).map(|i| (0..i).map(|j| t.a[i][j] * c[j]).sum()).collect();
        let sum = |f: &dyn Fn(usize) -> f64| (0..n).map(f).sum::<f64>();
        assert!((sum(&|i| b[i]) - 1.0).abs() < 1e-13);
        assert!((sum(&|i| b[i] * c[i]) - 0.5).abs() < 1e-13);
        assert!((sum(&|i| b[i] * c[i] * c[i]) - 1.0 / 3.0).abs() < 1e-13);
        assert!((sum(&|i| b[i] * ac[i]) - 1.0 / 6.0).abs() < 1e-13);
        assert!((sum(&|i| b[i] * c[i].powi(3)) - 0.25).abs() < 1e-13);
        assert!((sum(&|i| b[i] * c[i] * ac[i]) - 0.125).abs() < 1e-13);
        assert!((sum(&|i| b[i] * (0..i).map(|j| t.a[i][j] * c[j] * c[j]).sum::<f64>()) - 1.0 / 12.0).abs() < 1e-13);
        assert!((sum(&|i| b[i] * (0..i).map(|j| t.a[i][j] * ac[j]).sum::<f64>()) - 1.0 / 24.0).abs() < 1e-13);
    }

    #[test]
    fn rk4_conditions() {
        check_rows(&RK4);
        check_order4(RK4.b, &RK4);
        assert_eq!(RK4.propagation_stages(), 4);
    }

    #[test]
    fn tsit5_conditions() {
        check_rows(&TSIT5);
        check_order4(TSIT5.b, &TSIT5);
        let bt = TSIT5.btilde.unwrap();
        let bhat: Vec<f64> = TSIT5.b.iter().zip(bt).map(|(b, e)| b - e).collect();
        check_order4(&bhat, &TSIT5);
        assert!((bt.iter().sum::<f64>()).abs() < 1e-13);
        // FSAL: the last row equals the propagation weights
        assert_eq!(TSIT5.a[6], &TSIT5.b[..6]);
        assert_eq!(TSIT5.propagation_stages(), 6);
    }
}
