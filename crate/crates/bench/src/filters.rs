//! The 3x3 filters of the image demo.

use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Filter {
    Emboss,
    SobelY,
    Sharpen,
}

impl Filter {
    pub const ALL: [Filter; 3] = [Filter::Emboss, Filter::SobelY, Filter::Sharpen];

    pub fn taps(self) -> [f64; 9] {
        match self {
            Filter::Emboss => [-2.0, -1.0, 0.0, -1.0, 1.0, 1.0, 0.0, 1.0, 2.0],
            Filter::SobelY => [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0],
            Filter::Sharpen => [0.0, -1.0, 0.0, -1.0, 5.0, -1.0, 0.0, -1.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Filter::Emboss => "emboss",
            Filter::SobelY => "sobel_y",
            Filter::Sharpen => "sharpen",
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Filter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Filter::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| format!("unknown filter `{s}` (emboss, sobel_y, sharpen)"))
    }
}
