//! JSON descriptions of towers, graded operators, and anchored towers.
//! Matrices are stored row-major; shapes come from the level dims, so the
//! files stay flat and round-trip bit-exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebroid::{AlgebroidTower, AnchorMap, AnchoredLevel};
use crate::error::{Error, Result};
use crate::linalg::NormKind;
use crate::operators::GradedOperator;
use crate::tower::{make_tower, BanachLevel, BondingMap, Tower};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSchema {
    pub dim: usize,
    pub norm: NormKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSchema {
    /// Row-major level matrices, shapes dim_i x dim_i.
    pub levels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TowerSchema {
    pub levels: Vec<LevelSchema>,
    /// bondings[i] is the dim_i x dim_{i+1} map from level i+1 down.
    pub bondings: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorSchema>,
}

fn unflatten(data: &[f64], rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::Schema(format!(
            "{} has {} entries, expected {}x{}",
            what,
            data.len(),
            rows,
            cols
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

impl TowerSchema {
    pub fn to_tower(&self) -> Result<Tower> {
        if self.levels.is_empty() {
            return Err(Error::Schema("no levels".into()));
        }
        if self.bondings.len() + 1 != self.levels.len() {
            return Err(Error::Schema(format!(
                "{} bondings for {} levels",
                self.bondings.len(),
                self.levels.len()
            )));
        }
        let levels = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| BanachLevel::new(i, l.dim, l.norm.clone()))
            .collect::<Result<Vec<_>>>()?;
        let bondings = self
            .bondings
            .iter()
            .enumerate()
            .map(|(i, b)| {
                Ok(BondingMap::new(
                    i,
                    unflatten(b, self.levels[i].dim, self.levels[i + 1].dim, "bonding")?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        make_tower(levels, bondings)
    }

    pub fn from_tower(t: &Tower) -> Self {
        TowerSchema {
            levels: t
                .levels()
                .iter()
                .map(|l| LevelSchema {
                    dim: l.dim,
                    norm: l.norm.clone(),
                })
                .collect(),
            bondings: t.bondings().iter().map(|b| flatten(&b.matrix)).collect(),
            operator: None,
        }
    }

    /// The embedded operator, checked against the level dims.
    pub fn to_operator(&self, tower: &Tower) -> Result<Option<GradedOperator>> {
        let Some(op) = &self.operator else {
            return Ok(None);
        };
        if op.levels.len() != self.levels.len() {
            return Err(Error::Schema("operator level count".into()));
        }
        let levels = op
            .levels
            .iter()
            .zip(self.levels.iter())
            .map(|(data, l)| unflatten(data, l.dim, l.dim, "operator level"))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(GradedOperator::new(tower.clone(), tower.clone(), levels)?))
    }

    pub fn with_operator(mut self, op: &GradedOperator) -> Self {
        self.operator = Some(OperatorSchema {
            levels: op.levels.iter().map(flatten).collect(),
        });
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorSchema {
    /// base_dim x fiber_dim, row-major.
    pub constant: Vec<f64>,
    /// One base_dim x fiber_dim matrix per base coordinate; empty means a
    /// constant anchor.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub linear: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChartSchema {
    pub center: Vec<f64>,
    pub halfwidth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgebroidSchema {
    pub base: TowerSchema,
    pub fiber: TowerSchema,
    pub anchor: Vec<AnchorSchema>,
    /// bracket[i][k] is the antisymmetric fiber_dim x fiber_dim tensor for
    /// fiber coordinate k, row-major.
    pub bracket: Vec<Vec<Vec<f64>>>,
    pub chart: Vec<ChartSchema>,
}

impl AlgebroidSchema {
    pub fn to_algebroid(&self) -> Result<AlgebroidTower> {
        let base = self.base.to_tower()?;
        let fiber = self.fiber.to_tower()?;
        let n_levels = base.levels().len();
        if self.anchor.len() != n_levels
            || self.bracket.len() != n_levels
            || self.chart.len() != n_levels
        {
            return Err(Error::Schema("per-level array lengths".into()));
        }
        let mut levels = Vec::with_capacity(n_levels);
        for i in 0..n_levels {
            let bd = base.dim(i);
            let fd = fiber.dim(i);
            let constant = unflatten(&self.anchor[i].constant, bd, fd, "anchor constant")?;
            let anchor = if self.anchor[i].linear.is_empty() {
                AnchorMap::Constant(constant)
            } else {
                if self.anchor[i].linear.len() != bd {
                    return Err(Error::Schema("anchor linear count".into()));
                }
                let linear = self.anchor[i]
                    .linear
                    .iter()
                    .map(|l| unflatten(l, bd, fd, "anchor linear"))
                    .collect::<Result<Vec<_>>>()?;
                AnchorMap::Affine { constant, linear }
            };
            let structure = self.bracket[i]
                .iter()
                .map(|q| unflatten(q, fd, fd, "bracket tensor"))
                .collect::<Result<Vec<_>>>()?;
            let center = DVector::from_vec(self.chart[i].center.clone());
            levels.push(AnchoredLevel::new(
                bd,
                fd,
                center,
                self.chart[i].halfwidth,
                anchor,
                structure,
                None,
            )?);
        }
        AlgebroidTower::new(base, fiber, levels)
    }

    /// Frame weights are not serialized; a round-trip keeps the anchors and
    /// brackets but drops any Finsler choice.
    pub fn from_algebroid(t: &AlgebroidTower) -> Result<Self> {
        let mut anchor = Vec::with_capacity(t.levels.len());
        let mut bracket = Vec::with_capacity(t.levels.len());
        let mut chart = Vec::with_capacity(t.levels.len());
        for level in &t.levels {
            let a = match &level.anchor {
                AnchorMap::Constant(m) => AnchorSchema {
                    constant: flatten(m),
                    linear: Vec::new(),
                },
                AnchorMap::Affine { constant, linear } => AnchorSchema {
                    constant: flatten(constant),
                    linear: linear.iter().map(flatten).collect(),
                },
                AnchorMap::Smooth(_) => {
                    return Err(Error::Schema(
                        "closure-backed anchors cannot be serialized".into(),
                    ))
                }
            };
            anchor.push(a);
            bracket.push(level.structure.iter().map(flatten).collect());
            chart.push(ChartSchema {
                center: level.chart_center.iter().copied().collect(),
                halfwidth: level.chart_halfwidth,
            });
        }
        Ok(AlgebroidSchema {
            base: TowerSchema::from_tower(&t.base),
            fiber: TowerSchema::from_tower(&t.fiber),
            anchor,
            bracket,
            chart,
        })
    }
}

/// Either flavor of input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSchema {
    Algebroid(AlgebroidSchema),
    Tower(TowerSchema),
}

pub fn parse_input(text: &str) -> Result<InputSchema> {
    serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::prolongation::{build_prolongation_tower, SeedAlgebroid};
    use crate::operators::random_coherent;
    use crate::tower::projection_tower;
    use rand::SeedableRng;

    #[test]
    fn tower_round_trip_is_bit_exact() {
        let t = projection_tower(&[1, 2, 3]);
        let schema = TowerSchema::from_tower(&t);
        let text = serde_json::to_string(&schema).unwrap();
        let back: TowerSchema = serde_json::from_str(&text).unwrap();
        let t2 = back.to_tower().unwrap();
        for i in 0..t.depth() {
            assert_eq!(t.bondings()[i].matrix, t2.bondings()[i].matrix);
        }
        assert_eq!(text, serde_json::to_string(&TowerSchema::from_tower(&t2)).unwrap());
    }

    #[test]
    fn operator_embeds_in_tower_schema() {
        let t = projection_tower(&[2, 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let op = random_coherent(&t, &mut rng, 1.0);
        let schema = TowerSchema::from_tower(&t).with_operator(&op);
        let text = serde_json::to_string(&schema).unwrap();
        let back: TowerSchema = serde_json::from_str(&text).unwrap();
        let t2 = back.to_tower().unwrap();
        let op2 = back.to_operator(&t2).unwrap().unwrap();
        for (a, b) in op.levels.iter().zip(op2.levels.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn algebroid_round_trip() {
        let t = build_prolongation_tower(
            &SeedAlgebroid::constant(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])),
            2,
        )
        .unwrap();
        let schema = AlgebroidSchema::from_algebroid(&t).unwrap();
        let text = serde_json::to_string(&schema).unwrap();
        let back = match parse_input(&text).unwrap() {
            InputSchema::Algebroid(a) => a,
            InputSchema::Tower(_) => panic!("expected an anchored tower"),
        };
        let t2 = back.to_algebroid().unwrap();
        let z = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.4]);
        assert_eq!(
            t.levels[1].anchor.eval(&z),
            t2.levels[1].anchor.eval(&z)
        );
    }

    #[test]
    fn malformed_shapes_are_rejected() {
        let text = r#"{"levels":[{"dim":2,"norm":"euclidean"}],"bondings":[[1.0,0.0]]}"#;
        let schema: TowerSchema = serde_json::from_str(text).unwrap();
        assert!(schema.to_tower().is_err());
    }
}
