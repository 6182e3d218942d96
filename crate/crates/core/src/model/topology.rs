use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk form of a [`Topology`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub parts: Vec<PartSpec>,
    /// Owning part of every landmark.
    pub landmark_part: Vec<usize>,
    /// Left/right landmark correspondence (an involution), if the model is
    /// mirror symmetric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_mirror: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    pub name: String,
    pub parent: Option<usize>,
}

/// Parts form a tree; each landmark hangs off exactly one part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologySpec", into = "TopologySpec")]
pub struct Topology {
    spec: TopologySpec,
    root: usize,
    children: Vec<Vec<usize>>,
    part_landmarks: Vec<Vec<usize>>,
    slot: Vec<usize>,
    order: Vec<usize>,
    part_mirror: Option<Vec<usize>>,
}

impl From<Topology> for TopologySpec {
    fn from(t: Topology) -> Self {
        t.spec
    }
}

impl TryFrom<TopologySpec> for Topology {
    type Error = Error;

    fn try_from(spec: TopologySpec) -> Result<Self> {
        Topology::new(spec)
    }
}

impl Topology {
    pub fn new(spec: TopologySpec) -> Result<Self> {
        let np = spec.parts.len();
        if np == 0 {
            return Err(Error::Config("topology has no parts".into()));
        }
        let roots: Vec<usize> = (0..np).filter(|&p| spec.parts[p].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Config(format!(
                "topology must have exactly one root part, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); np];
        for (p, part) in spec.parts.iter().enumerate() {
            if let Some(parent) = part.parent {
                if parent >= np || parent == p {
                    return Err(Error::Config(format!("part {p} has invalid parent {parent}")));
                }
                children[parent].push(p);
            }
        }
        // pre-order walk; a cycle leaves parts unvisited
        let mut order = Vec::with_capacity(np);
        let mut stack = vec![root];
        while let Some(p) = stack.pop() {
            order.push(p);
            for &c in children[p].iter().rev() {
                stack.push(c);
            }
        }
        if order.len() != np {
            return Err(Error::Config("part graph is not a tree".into()));
        }
        let mut part_landmarks = vec![Vec::new(); np];
        let mut slot = vec![0; spec.landmark_part.len()];
        for (k, &p) in spec.landmark_part.iter().enumerate() {
            if p >= np {
                return Err(Error::Config(format!("landmark {k} refers to missing part {p}")));
            }
            slot[k] = part_landmarks[p].len();
            part_landmarks[p].push(k);
        }
        let part_mirror = match &spec.landmark_mirror {
            None => None,
            Some(m) => Some(derive_part_mirror(&spec, m, &part_landmarks)?),
        };
        Ok(Self {
            spec,
            root,
            children,
            part_landmarks,
            slot,
            order,
            part_mirror,
        })
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn num_parts(&self) -> usize {
        self.spec.parts.len()
    }

    pub fn num_landmarks(&self) -> usize {
        self.spec.landmark_part.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, part: usize) -> Option<usize> {
        self.spec.parts[part].parent
    }

    pub fn children(&self, part: usize) -> &[usize] {
        &self.children[part]
    }

    pub fn part_name(&self, part: usize) -> &str {
        &self.spec.parts[part].name
    }

    pub fn landmarks_of(&self, part: usize) -> &[usize] {
        &self.part_landmarks[part]
    }

    pub fn part_of(&self, landmark: usize) -> usize {
        self.spec.landmark_part[landmark]
    }

    /// Position of `landmark` within its part's landmark list.
    pub fn slot(&self, landmark: usize) -> usize {
        self.slot[landmark]
    }

    /// Parts in pre-order (every part before its children).
    pub fn preorder(&self) -> &[usize] {
        &self.order
    }

    pub fn landmark_mirror(&self) -> Option<&[usize]> {
        self.spec.landmark_mirror.as_deref()
    }

    pub fn part_mirror(&self) -> Option<&[usize]> {
        self.part_mirror.as_deref()
    }

    /// The 68-landmark face grouped into 10 parts, rooted at the nose.
    pub fn face68() -> Self {
        let parts: [(&str, Option<usize>); 10] = [
            ("nose", None),
            ("right_eye", Some(0)),
            ("left_eye", Some(0)),
            ("right_brow", Some(1)),
            ("left_brow", Some(2)),
            ("upper_lip", Some(0)),
            ("lower_lip", Some(5)),
            ("chin", Some(6)),
            ("right_jaw", Some(7)),
            ("left_jaw", Some(7)),
        ];
        let mut landmark_part = vec![0usize; 68];
        let groups: [(std::ops::RangeInclusive<usize>, usize); 12] = [
            (0..=5, 8),
            (6..=10, 7),
            (11..=16, 9),
            (17..=21, 3),
            (22..=26, 4),
            (27..=35, 0),
            (36..=41, 1),
            (42..=47, 2),
            (48..=54, 5),
            (55..=59, 6),
            (60..=64, 5),
            (65..=67, 6),
        ];
        for (range, part) in groups {
            for k in range {
                landmark_part[k] = part;
            }
        }
        Self::new(TopologySpec {
            parts: parts
                .iter()
                .map(|(n, p)| PartSpec {
                    name: n.to_string(),
                    parent: *p,
                })
                .collect(),
            landmark_part,
            landmark_mirror: Some(face68_mirror()),
        })
        .expect("built-in topology is valid")
    }

    /// Seven single-template parts used by the low-resolution component.
    pub fn face_low_res() -> Self {
        let parts: [(&str, Option<usize>); 7] = [
            ("nose", None),
            ("right_eye", Some(0)),
            ("left_eye", Some(0)),
            ("mouth", Some(0)),
            ("chin", Some(3)),
            ("right_jaw", Some(4)),
            ("left_jaw", Some(4)),
        ];
        Self::new(TopologySpec {
            parts: parts
                .iter()
                .map(|(n, p)| PartSpec {
                    name: n.to_string(),
                    parent: *p,
                })
                .collect(),
            landmark_part: (0..7).collect(),
            landmark_mirror: Some(vec![0, 2, 1, 3, 4, 6, 5]),
        })
        .expect("built-in topology is valid")
    }
}

/// 68-point indices averaged to obtain each low-resolution part position.
pub fn low_res_point_groups() -> Vec<Vec<usize>> {
    vec![
        (27..=35).collect(),
        (36..=41).collect(),
        (42..=47).collect(),
        (48..=67).collect(),
        (6..=10).collect(),
        (0..=5).collect(),
        (11..=16).collect(),
    ]
}

/// Left/right correspondence of the standard 68-point annotation.
pub fn face68_mirror() -> Vec<usize> {
    let mut m: Vec<usize> = (0..68).collect();
    let mut pair = |a: usize, b: usize| {
        m[a] = b;
        m[b] = a;
    };
    for i in 0..=7 {
        pair(i, 16 - i);
    }
    for i in 17..=21 {
        pair(i, 43 - i);
    }
    pair(31, 35);
    pair(32, 34);
    for (a, b) in [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)] {
        pair(a, b);
    }
    for (a, b) in [(48, 54), (49, 53), (50, 52), (55, 59), (56, 58), (60, 64), (61, 63), (65, 67)] {
        pair(a, b);
    }
    m
}

fn derive_part_mirror(
    spec: &TopologySpec,
    mirror: &[usize],
    part_landmarks: &[Vec<usize>],
) -> Result<Vec<usize>> {
    let nl = spec.landmark_part.len();
    if mirror.len() != nl {
        return Err(Error::Config(format!(
            "mirror table has {} entries for {nl} landmarks",
            mirror.len()
        )));
    }
    for (k, &m) in mirror.iter().enumerate() {
        if m >= nl || mirror[m] != k {
            return Err(Error::Config(format!("mirror table is not an involution at landmark {k}")));
        }
    }
    let np = spec.parts.len();
    let mut part_mirror = vec![usize::MAX; np];
    for p in 0..np {
        let images: Vec<usize> = part_landmarks[p]
            .iter()
            .map(|&k| spec.landmark_part[mirror[k]])
            .collect();
        let target = match images.first() {
            Some(&t) => t,
            None => p,
        };
        if images.iter().any(|&t| t != target) || part_landmarks[target].len() != part_landmarks[p].len() {
            return Err(Error::Config(format!(
                "mirror table splits the landmarks of part {p} across parts"
            )));
        }
        part_mirror[p] = target;
    }
    for p in 0..np {
        let mirrored_parent = spec.parts[p].parent.map(|q| part_mirror[q]);
        if spec.parts[part_mirror[p]].parent != mirrored_parent {
            return Err(Error::Config(format!("part tree is not mirror symmetric at part {p}")));
        }
    }
    Ok(part_mirror)
}
