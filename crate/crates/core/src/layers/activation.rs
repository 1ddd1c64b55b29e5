/// ELU with unit coefficient.
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    pub(crate) fn apply_in_place(self, xs: &mut [f64]) {
        if self == Activation::Elu {
            xs.iter_mut().for_each(|x| *x = elu(*x));
        }
    }

    /// Chain rule through the activation, using only its output:
    /// ELU'(x) is 1 for x > 0 and exp(x) = out + 1 otherwise.
    pub(crate) fn backward_in_place(self, out: &[f64], grad: &mut [f64]) {
        if self == Activation::Elu {
            for (g, &o) in grad.iter_mut().zip(out) {
                if o <= 0.0 {
                    *g *= o + 1.0;
                }
            }
        }
    }
}
