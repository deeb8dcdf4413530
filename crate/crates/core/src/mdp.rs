//! Environment dynamics: the six-move action space, its per-axis partial
//! projections, the clamped transition model and the sign-of-progress reward.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::volume::{clamp_position, Position};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    /// Step-sequence order.
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i % 3]
    }

    pub fn name(self) -> &'static str {
        ["x", "y", "z"][self.index()]
    }

    /// Unit basis vector of this axis.
    pub fn basis(self) -> [i64; 3] {
        let mut e = [0; 3];
        e[self.index()] = 1;
        e
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    XPlus,
    XMinus,
    YPlus,
    YMinus,
    ZPlus,
    ZMinus,
}

impl Action {
    /// Ordered as the merged six-way distribution: x+, x-, y+, y-, z+, z-.
    pub const ALL: [Action; 6] = [
        Action::XPlus,
        Action::XMinus,
        Action::YPlus,
        Action::YMinus,
        Action::ZPlus,
        Action::ZMinus,
    ];

    pub fn new(axis: Axis, sign: Sign) -> Action {
        Action::ALL[2 * axis.index() + usize::from(sign == Sign::Minus)]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn axis(self) -> Axis {
        Axis::from_index(self.index() / 2)
    }

    pub fn sign(self) -> Sign {
        if self.index().is_multiple_of(2) {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    /// Position within this action's partial space: 0 for `i+`, 1 for `i-`.
    pub fn partial_index(self) -> usize {
        self.index() % 2
    }

    pub fn token(self) -> &'static str {
        ["x+", "x-", "y+", "y-", "z+", "z-"][self.index()]
    }

    /// Displacement `U(a)` for step length `eta`.
    pub fn displacement(self, eta: i64) -> [i64; 3] {
        self.axis().basis().map(|e| e * eta * self.sign().value())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Action> {
        Action::ALL
            .into_iter()
            .find(|a| a.token() == s)
            .ok_or_else(|| Error::format("action token", s, "expected one of x+ x- y+ y- z+ z-"))
    }
}

/// The two-move projection `{i+, i-}` of the action space onto one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartialActionSpace {
    pub axis: Axis,
}

impl PartialActionSpace {
    pub fn all() -> [PartialActionSpace; 3] {
        Axis::ALL.map(|axis| PartialActionSpace { axis })
    }

    pub fn members(self) -> [Action; 2] {
        [Action::new(self.axis, Sign::Plus), Action::new(self.axis, Sign::Minus)]
    }

    pub fn contains(self, a: Action) -> bool {
        a.axis() == self.axis
    }
}

/// One environment step, tagged with the volume it happened in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub volume: usize,
    pub from: Position,
    pub action: Action,
    pub to: Position,
    pub reward: i8,
    /// Probability the behavior policy gave `action` when it was taken.
    pub behavior: f64,
}

impl Transition {
    pub fn axis(&self) -> Axis {
        self.action.axis()
    }
}

/// Apply `a` with step length `eta`, clamping each coordinate to the grid.
pub fn transition(q: Position, a: Action, eta: i64, dims: [usize; 3]) -> Position {
    let d = a.displacement(eta);
    clamp_position([q[0] + d[0], q[1] + d[1], q[2] + d[2]], dims)
}

/// `sign(|p - q| - |p - q'|)`: +1 when the move gets strictly closer to the
/// target, -1 when strictly farther, 0 otherwise.
pub fn reward(q: Position, q_next: Position, target: [f64; 3]) -> i8 {
    let before = squared_distance(q, target);
    let after = squared_distance(q_next, target);
    match before.partial_cmp(&after) {
        Some(std::cmp::Ordering::Greater) => 1,
        Some(std::cmp::Ordering::Less) => -1,
        _ => 0,
    }
}

pub fn squared_distance(q: Position, p: [f64; 3]) -> f64 {
    (0..3).map(|i| (q[i] as f64 - p[i]).powi(2)).sum()
}

/// Composite displacement `sum_i a_i * e_i` from one signed choice per axis.
pub fn reconstruct_action(choices: [i64; 3]) -> [i64; 3] {
    Axis::ALL.iter().fold([0; 3], |mut acc, axis| {
        let e = axis.basis();
        let a = choices[axis.index()];
        for k in 0..3 {
            acc[k] += a * e[k];
        }
        acc
    })
}

/// Concatenate three partial distributions into one six-way distribution and
/// renormalize by 1/3.
pub fn merge_policies(px: [f64; 2], py: [f64; 2], pz: [f64; 2]) -> Result<[f64; 6]> {
    let mut out = [0.0; 6];
    for (k, pair) in [px, py, pz].into_iter().enumerate() {
        let sum = pair[0] + pair[1];
        if pair.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "partial policy {} is not a distribution: {pair:?}",
                Axis::from_index(k).name()
            )));
        }
        out[2 * k] = pair[0] / 3.0;
        out[2 * k + 1] = pair[1] / 3.0;
    }
    Ok(out)
}
