use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Dense class index into a [`Vocabulary`].
pub type ClassId = usize;

/// The global class universe. Ids are dense `0..len()` in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, ClassId>,
}

impl Vocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            names: Vec::new(),
            index: HashMap::new(),
        };
        for name in names {
            vocab.push(name.into())?;
        }
        Ok(vocab)
    }

    /// Vocabulary `c0, c1, ...` for synthetic data and tests.
    pub fn numbered(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("c{i}"))).expect("generated names are unique")
    }

    fn push(&mut self, name: String) -> Result<ClassId> {
        if name.is_empty()
            || name
                .chars()
                .any(|c| c.is_whitespace() || c == ',' || c == ':')
        {
            return Err(Error::InvalidArgument(format!(
                "invalid class name {name:?}"
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate class name {name:?}"
            )));
        }
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Unordered set of action classes, stored sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ActionSet(Vec<ClassId>);

impl ActionSet {
    pub fn new<I: IntoIterator<Item = ClassId>>(classes: I) -> Self {
        let mut v: Vec<ClassId> = classes.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        ActionSet(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.0.binary_search(&class).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[ClassId] {
        &self.0
    }

    pub fn insert(&mut self, class: ClassId) {
        if let Err(pos) = self.0.binary_search(&class) {
            self.0.insert(pos, class);
        }
    }

    pub fn intersection(&self, other: &ActionSet) -> ActionSet {
        ActionSet(self.iter().filter(|&c| other.contains(c)).collect())
    }

    pub fn difference(&self, other: &ActionSet) -> ActionSet {
        ActionSet(self.iter().filter(|&c| !other.contains(c)).collect())
    }

    pub fn is_subset(&self, other: &ActionSet) -> bool {
        self.iter().all(|c| other.contains(c))
    }

    pub fn max_class(&self) -> Option<ClassId> {
        self.0.last().copied()
    }

    /// Fails if any member is not a valid id for `num_classes` classes.
    pub fn check_within(&self, num_classes: usize) -> Result<()> {
        match self.max_class() {
            Some(c) if c >= num_classes => Err(Error::UnknownClass(c)),
            _ => Ok(()),
        }
    }
}

impl FromIterator<ClassId> for ActionSet {
    fn from_iter<I: IntoIterator<Item = ClassId>>(iter: I) -> Self {
        ActionSet::new(iter)
    }
}

impl fmt::Display for ActionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}
