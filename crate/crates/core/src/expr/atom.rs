//! Interned atoms: jet variables, parameters, logarithms and derived (named) denominators.

use super::expr::Expr;
use super::rational::Q;
use once_cell::sync::Lazy;
use rustc_hash::FxHashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

/// Handle to an interned atom. Ordering follows interning order.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom(pub(crate) u32);

#[derive(Clone, Debug)]
pub enum AtomKind {
    /// `var` differentiated `order` times in x; order 0 is the coordinate itself.
    Jet { var: Arc<str>, order: u32 },
    /// A constant symbol (kappa, c, a_i ...).
    Param { name: Arc<str> },
    /// Natural logarithm of another atom.
    Log { base: Atom },
    /// Named non-monomial expression used as an invertible denominator.
    Derived { name: Arc<str>, def: Expr },
}

#[derive(Debug)]
pub struct AtomData {
    pub kind: AtomKind,
    pub name: String,
    /// Jet and parameter atoms this atom depends on (sorted, itself for base atoms).
    pub deps: Vec<Atom>,
    /// Differential degree, when homogeneous.
    pub grade: Option<Q>,
}

struct Interner {
    atoms: Vec<Arc<AtomData>>,
    jets: FxHashMap<(Arc<str>, u32), Atom>,
    params: FxHashMap<Arc<str>, Atom>,
    logs: FxHashMap<Atom, Atom>,
    derived: FxHashMap<Expr, Atom>,
    derived_names: FxHashMap<Arc<str>, Atom>,
}

static INTERNER: Lazy<RwLock<Interner>> = Lazy::new(|| {
    RwLock::new(Interner {
        atoms: Vec::new(),
        jets: FxHashMap::default(),
        params: FxHashMap::default(),
        logs: FxHashMap::default(),
        derived: FxHashMap::default(),
        derived_names: FxHashMap::default(),
    })
});

static DX_CACHE: Lazy<RwLock<FxHashMap<Atom, Expr>>> = Lazy::new(|| RwLock::new(FxHashMap::default()));

impl Atom {
    pub fn data(self) -> Arc<AtomData> {
        INTERNER.read().unwrap().atoms[self.0 as usize].clone()
    }

    pub fn index(self) -> u32 {
        self.0
    }

    pub fn jet(var: &str, order: u32) -> Atom {
        {
            let g = INTERNER.read().unwrap();
            if let Some(a) = g.jets.get(&(Arc::<str>::from(var), order)) {
                return *a;
            }
        }
        let mut g = INTERNER.write().unwrap();
        let key: Arc<str> = Arc::from(var);
        if let Some(a) = g.jets.get(&(key.clone(), order)) {
            return *a;
        }
        let id = Atom(g.atoms.len() as u32);
        let name = if order == 0 { var.to_string() } else { format!("{var}#{order}") };
        g.atoms.push(Arc::new(AtomData {
            kind: AtomKind::Jet { var: key.clone(), order },
            name,
            deps: vec![id],
            grade: Some(Q::from_int(order as i64)),
        }));
        g.jets.insert((key, order), id);
        id
    }

    pub fn param(name: &str) -> Atom {
        {
            let g = INTERNER.read().unwrap();
            if let Some(a) = g.params.get(name) {
                return *a;
            }
        }
        let mut g = INTERNER.write().unwrap();
        if let Some(a) = g.params.get(name) {
            return *a;
        }
        let id = Atom(g.atoms.len() as u32);
        let key: Arc<str> = Arc::from(name);
        g.atoms.push(Arc::new(AtomData {
            kind: AtomKind::Param { name: key.clone() },
            name: name.to_string(),
            deps: vec![id],
            grade: Some(Q::zero()),
        }));
        g.params.insert(key, id);
        id
    }

    /// `log(base)`.
    pub fn log(base: Atom) -> Atom {
        {
            let g = INTERNER.read().unwrap();
            if let Some(a) = g.logs.get(&base) {
                return *a;
            }
        }
        let bd = base.data();
        let mut g = INTERNER.write().unwrap();
        if let Some(a) = g.logs.get(&base) {
            return *a;
        }
        let id = Atom(g.atoms.len() as u32);
        g.atoms.push(Arc::new(AtomData {
            kind: AtomKind::Log { base },
            name: format!("log({})", bd.name),
            deps: bd.deps.clone(),
            grade: Some(Q::zero()),
        }));
        g.logs.insert(base, id);
        id
    }

    /// Interns a derived atom for `def`. The definition is sign-normalized; the
    /// returned sign `s` satisfies `def = s * atom`.
    ///
    /// If the definition is already registered, the existing atom is reused and
    /// `name` is ignored. A name that is already bound to a different definition
    /// is an error.
    pub fn derived(name: &str, def: &Expr) -> Result<(Q, Atom), String> {
        if def.terms().len() < 2 {
            return Err(format!("derived atom {name:?} must have a non-monomial definition"));
        }
        let mut sign = Q::one();
        let mut d = def.clone();
        if d.terms()[0].1.is_negative() {
            sign = -Q::one();
            d = -d;
        }
        {
            let g = INTERNER.read().unwrap();
            if let Some(a) = g.derived.get(&d) {
                return Ok((sign, *a));
            }
            if g.derived_names.contains_key(name) {
                return Err(format!("derived atom name {name:?} is already bound to another definition"));
            }
        }
        let mut deps: Vec<Atom> = Vec::new();
        for a in d.atoms() {
            deps.extend(a.data().deps.iter().copied());
        }
        deps.sort();
        deps.dedup();
        let grade = d.homogeneous_grade();
        let mut g = INTERNER.write().unwrap();
        if let Some(a) = g.derived.get(&d) {
            return Ok((sign, *a));
        }
        let id = Atom(g.atoms.len() as u32);
        let key: Arc<str> = Arc::from(name);
        g.atoms.push(Arc::new(AtomData {
            kind: AtomKind::Derived { name: key.clone(), def: d.clone() },
            name: name.to_string(),
            deps,
            grade,
        }));
        g.derived.insert(d, id);
        g.derived_names.insert(key, id);
        Ok((sign, id))
    }

    /// Derived atom for `def` with an automatically generated name.
    pub fn derived_auto(def: &Expr) -> Result<(Q, Atom), String> {
        let mut d = def.clone();
        if !d.terms().is_empty() && d.terms()[0].1.is_negative() {
            d = -d;
        }
        {
            let g = INTERNER.read().unwrap();
            if let Some(a) = g.derived.get(&d) {
                let sign = if def.terms()[0].1.is_negative() { -Q::one() } else { Q::one() };
                return Ok((sign, *a));
            }
        }
        let name = format!("[{}]", d);
        Atom::derived(&name, def)
    }

    /// Looks up a derived atom by name.
    pub fn derived_by_name(name: &str) -> Option<Atom> {
        INTERNER.read().unwrap().derived_names.get(name).copied()
    }

    pub fn kind(self) -> AtomKind {
        self.data().kind.clone()
    }

    pub fn name(self) -> String {
        self.data().name.clone()
    }

    pub fn is_jet(self) -> bool {
        matches!(self.data().kind, AtomKind::Jet { .. })
    }

    pub fn is_param(self) -> bool {
        matches!(self.data().kind, AtomKind::Param { .. })
    }

    /// `(var, order)` for jet atoms.
    pub fn as_jet(self) -> Option<(Arc<str>, u32)> {
        match &self.data().kind {
            AtomKind::Jet { var, order } => Some((var.clone(), *order)),
            _ => None,
        }
    }

    /// Definition of a derived atom.
    pub fn definition(self) -> Option<Expr> {
        match &self.data().kind {
            AtomKind::Derived { def, .. } => Some(def.clone()),
            _ => None,
        }
    }

    /// True when this atom is, or is built from, `base`.
    pub fn depends_on(self, base: Atom) -> bool {
        self.data().deps.binary_search(&base).is_ok()
    }

    /// Next jet atom (x-derivative of a jet atom).
    pub fn next_jet(self) -> Option<Atom> {
        self.as_jet().map(|(v, m)| Atom::jet(&v, m + 1))
    }

    /// Cached total x-derivative of a derived atom's definition.
    pub(crate) fn derived_dx(self) -> Expr {
        if let Some(e) = DX_CACHE.read().unwrap().get(&self) {
            return e.clone();
        }
        let def = self.definition().expect("derived atom");
        let d = def.total_dx();
        DX_CACHE.write().unwrap().insert(self, d.clone());
        d
    }

    /// Sort key used for deterministic display.
    pub(crate) fn display_key(self) -> (u8, String, u32) {
        let d = self.data();
        match &d.kind {
            AtomKind::Jet { var, order } => (1, var.to_string(), *order),
            AtomKind::Param { name } => (0, name.to_string(), 0),
            AtomKind::Log { .. } => (2, d.name.clone(), 0),
            AtomKind::Derived { name, .. } => (3, name.to_string(), 0),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.data().name)
    }
}

impl fmt::Debug for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.data().name)
    }
}
