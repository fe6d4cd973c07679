use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::CurriculumError;

pub type CourseCode = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Course {
    pub code: CourseCode,
    pub name: String,
    pub nominal_semester: u32,
}

impl Course {
    pub fn new(code: CourseCode, name: impl Into<String>, nominal_semester: u32) -> Self {
        Self {
            code,
            name: name.into(),
            nominal_semester,
        }
    }
}

/// Validated prerequisite DAG together with the nominal semester plan.
///
/// Immutable once built; every query is a pure function of the graph.
#[derive(Debug, Clone)]
pub struct CurriculumDag {
    courses: BTreeMap<CourseCode, Course>,
    prereqs: BTreeMap<CourseCode, BTreeSet<CourseCode>>,
    dependents: BTreeMap<CourseCode, BTreeSet<CourseCode>>,
    plan: Vec<Vec<CourseCode>>,
    topo: Vec<CourseCode>,
}

impl CurriculumDag {
    /// Validates courses, edges `(prerequisite, dependent)` and the semester plan.
    ///
    /// `plan[s]` lists the codes scheduled in semester `s + 1`. An empty plan
    /// is derived from each course's `nominal_semester`.
    pub fn build(
        courses: Vec<Course>,
        edges: &[(CourseCode, CourseCode)],
        plan: Vec<Vec<CourseCode>>,
    ) -> Result<Self, CurriculumError> {
        if courses.is_empty() {
            return Err(CurriculumError::Empty);
        }
        let mut by_code = BTreeMap::new();
        for course in courses {
            if course.nominal_semester == 0 {
                return Err(CurriculumError::BadSemester {
                    code: course.code,
                    semester: 0,
                });
            }
            let code = course.code;
            if by_code.insert(code, course).is_some() {
                return Err(CurriculumError::DuplicateCode(code));
            }
        }

        let plan = if plan.is_empty() {
            let last = by_code.values().map(|c| c.nominal_semester).max().unwrap_or(1);
            let mut derived = vec![Vec::new(); last as usize];
            for c in by_code.values() {
                derived[c.nominal_semester as usize - 1].push(c.code);
            }
            derived
        } else {
            plan
        };
        let mut placed: BTreeMap<CourseCode, usize> = BTreeMap::new();
        for (s, semester) in plan.iter().enumerate() {
            for &code in semester {
                if !by_code.contains_key(&code) {
                    return Err(CurriculumError::UnknownCourse(code));
                }
                if placed.insert(code, s).is_some() {
                    return Err(CurriculumError::PlanMismatch(code));
                }
            }
        }
        if let Some(code) = by_code.keys().find(|c| !placed.contains_key(c)) {
            return Err(CurriculumError::PlanMismatch(*code));
        }

        let mut prereqs: BTreeMap<CourseCode, BTreeSet<CourseCode>> =
            by_code.keys().map(|&c| (c, BTreeSet::new())).collect();
        let mut dependents = prereqs.clone();
        for &(pre, dep) in edges {
            for code in [pre, dep] {
                if !by_code.contains_key(&code) {
                    return Err(CurriculumError::UnknownCourse(code));
                }
            }
            prereqs.get_mut(&dep).unwrap().insert(pre);
            dependents.get_mut(&pre).unwrap().insert(dep);
        }

        let topo = kahn_order(&prereqs, &dependents).map_err(|remaining| {
            CurriculumError::CycleDetected(find_cycle(&remaining, &dependents))
        })?;

        Ok(Self {
            courses: by_code,
            prereqs,
            dependents,
            plan,
            topo,
        })
    }

    pub fn len(&self) -> usize {
        self.courses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.courses.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.prereqs.values().map(BTreeSet::len).sum()
    }

    pub fn course(&self, code: CourseCode) -> Option<&Course> {
        self.courses.get(&code)
    }

    pub fn courses(&self) -> impl Iterator<Item = &Course> {
        self.courses.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = (CourseCode, CourseCode)> + '_ {
        self.prereqs
            .iter()
            .flat_map(|(&dep, pres)| pres.iter().map(move |&pre| (pre, dep)))
    }

    pub fn plan(&self) -> &[Vec<CourseCode>] {
        &self.plan
    }

    /// 1-based plan semester of a course.
    pub fn plan_semester(&self, code: CourseCode) -> Option<u32> {
        self.plan
            .iter()
            .position(|s| s.contains(&code))
            .map(|s| s as u32 + 1)
    }

    pub fn prerequisites(&self, code: CourseCode) -> Option<&BTreeSet<CourseCode>> {
        self.prereqs.get(&code)
    }

    /// Deterministic topological order; ties resolved by ascending code.
    pub fn topological_order(&self) -> &[CourseCode] {
        &self.topo
    }

    /// Courses with no prerequisites.
    pub fn initially_enrollable(&self) -> Vec<CourseCode> {
        self.prereqs
            .iter()
            .filter(|(_, p)| p.is_empty())
            .map(|(&c, _)| c)
            .collect()
    }

    /// Cumulative number of plan courses scheduled in semesters `1..=semester_index`.
    pub fn expected_courses(&self, semester_index: u32) -> usize {
        self.plan
            .iter()
            .take(semester_index as usize)
            .map(Vec::len)
            .sum()
    }

    /// Every course transitively blocked by `code`.
    pub fn downstream_blocked(&self, code: CourseCode) -> Result<BTreeSet<CourseCode>, CurriculumError> {
        if !self.courses.contains_key(&code) {
            return Err(CurriculumError::UnknownCourse(code));
        }
        let mut seen = BTreeSet::new();
        let mut stack: Vec<CourseCode> = self.dependents[&code].iter().copied().collect();
        while let Some(next) = stack.pop() {
            if seen.insert(next) {
                stack.extend(self.dependents[&next].iter().copied());
            }
        }
        Ok(seen)
    }
}

fn kahn_order(
    prereqs: &BTreeMap<CourseCode, BTreeSet<CourseCode>>,
    dependents: &BTreeMap<CourseCode, BTreeSet<CourseCode>>,
) -> Result<Vec<CourseCode>, BTreeSet<CourseCode>> {
    let mut indegree: BTreeMap<CourseCode, usize> =
        prereqs.iter().map(|(&c, p)| (c, p.len())).collect();
    let mut ready: BinaryHeap<Reverse<CourseCode>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&c, _)| Reverse(c))
        .collect();
    let mut order = Vec::with_capacity(prereqs.len());
    while let Some(Reverse(code)) = ready.pop() {
        order.push(code);
        for dep in &dependents[&code] {
            let d = indegree.get_mut(dep).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(*dep));
            }
        }
    }
    if order.len() == prereqs.len() {
        Ok(order)
    } else {
        let done: BTreeSet<_> = order.into_iter().collect();
        Err(prereqs.keys().filter(|c| !done.contains(c)).copied().collect())
    }
}

/// Walks forward inside the unsorted remainder until a node repeats.
///
/// Every node left over by Kahn's algorithm has a predecessor inside the
/// remainder, so walking backwards along prerequisites must revisit a node.
fn find_cycle(
    remaining: &BTreeSet<CourseCode>,
    dependents: &BTreeMap<CourseCode, BTreeSet<CourseCode>>,
) -> Vec<CourseCode> {
    // Restrict to nodes that still have a successor in the remainder; nodes
    // that only hang off a cycle are pruned iteratively.
    let mut live = remaining.clone();
    loop {
        let dead: Vec<_> = live
            .iter()
            .filter(|c| !dependents[c].iter().any(|d| live.contains(d)))
            .copied()
            .collect();
        if dead.is_empty() {
            break;
        }
        for d in dead {
            live.remove(&d);
        }
    }
    let Some(&start) = live.iter().next() else {
        return Vec::new();
    };
    let mut path = vec![start];
    let mut pos: BTreeMap<CourseCode, usize> = BTreeMap::from([(start, 0)]);
    let mut current = start;
    loop {
        let next = *dependents[&current]
            .iter()
            .find(|d| live.contains(d))
            .expect("live nodes have a live successor");
        if let Some(&i) = pos.get(&next) {
            let mut cycle = path[i..].to_vec();
            cycle.push(next);
            return cycle;
        }
        pos.insert(next, path.len());
        path.push(next);
        current = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn courses(n: u32) -> Vec<Course> {
        (1..=n).map(|c| Course::new(c, format!("C{c}"), 1)).collect()
    }

    #[test]
    fn empty_edges_all_enrollable() {
        let dag = CurriculumDag::build(courses(3), &[], vec![]).unwrap();
        assert_eq!(dag.len(), 3);
        assert_eq!(dag.initially_enrollable(), vec![1, 2, 3]);
    }

    #[test]
    fn two_cycle_detected() {
        let err = CurriculumDag::build(courses(2), &[(1, 2), (2, 1)], vec![]).unwrap_err();
        match err {
            CurriculumError::CycleDetected(cycle) => {
                assert_eq!(cycle.first(), cycle.last());
                assert_eq!(cycle.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_duplicate() {
        assert_eq!(
            CurriculumDag::build(courses(2), &[(1, 9)], vec![]).unwrap_err(),
            CurriculumError::UnknownCourse(9)
        );
        let mut dup = courses(2);
        dup.push(Course::new(2, "again", 1));
        assert_eq!(
            CurriculumDag::build(dup, &[], vec![]).unwrap_err(),
            CurriculumError::DuplicateCode(2)
        );
    }

    #[test]
    fn plan_must_cover_each_course_once() {
        let err = CurriculumDag::build(courses(3), &[], vec![vec![1, 2], vec![2, 3]]).unwrap_err();
        assert_eq!(err, CurriculumError::PlanMismatch(2));
        let err = CurriculumDag::build(courses(3), &[], vec![vec![1, 2]]).unwrap_err();
        assert_eq!(err, CurriculumError::PlanMismatch(3));
    }

    #[test]
    fn expected_courses_is_cumulative() {
        let plan = vec![vec![1, 2, 3], vec![4, 5, 6, 7], vec![8, 9, 10, 11, 12]];
        let dag = CurriculumDag::build(courses(12), &[], plan).unwrap();
        assert_eq!(dag.expected_courses(0), 0);
        assert_eq!(dag.expected_courses(2), 7);
        assert_eq!(dag.expected_courses(3), 12);
        assert_eq!(dag.expected_courses(9), 12);

        let even: Vec<Vec<u32>> = (0..3).map(|s| (s * 4 + 1..=s * 4 + 4).collect()).collect();
        let dag = CurriculumDag::build(courses(12), &[], even).unwrap();
        assert_eq!(dag.expected_courses(3), 12);
    }

    #[test]
    fn downstream_closure() {
        let chain = CurriculumDag::build(courses(3), &[(1, 2), (2, 3)], vec![]).unwrap();
        assert_eq!(chain.downstream_blocked(1).unwrap(), BTreeSet::from([2, 3]));
        assert!(chain.downstream_blocked(3).unwrap().is_empty());
        assert_eq!(chain.downstream_blocked(7), Err(CurriculumError::UnknownCourse(7)));

        let diamond =
            CurriculumDag::build(courses(4), &[(1, 2), (1, 3), (2, 4), (3, 4)], vec![]).unwrap();
        assert_eq!(diamond.downstream_blocked(1).unwrap(), BTreeSet::from([2, 3, 4]));
    }

    #[test]
    fn topological_ties_by_code() {
        let dag = CurriculumDag::build(courses(5), &[(5, 1), (3, 2)], vec![]).unwrap();
        assert_eq!(dag.topological_order(), &[3, 2, 4, 5, 1]);
    }

    /// Independent recursive DFS cycle check (white/grey/black colouring).
    fn dfs_has_cycle(n: u32, edges: &[(u32, u32)]) -> bool {
        fn visit(u: u32, adj: &BTreeMap<u32, Vec<u32>>, colour: &mut BTreeMap<u32, u8>) -> bool {
            colour.insert(u, 1);
            for &v in adj.get(&u).into_iter().flatten() {
                match colour.get(&v).copied().unwrap_or(0) {
                    1 => return true,
                    0 if visit(v, adj, colour) => return true,
                    _ => {}
                }
            }
            colour.insert(u, 2);
            false
        }
        let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &(a, b) in edges {
            adj.entry(a).or_default().push(b);
        }
        let mut colour = BTreeMap::new();
        (1..=n).any(|u| colour.get(&u).copied().unwrap_or(0) == 0 && visit(u, &adj, &mut colour))
    }

    fn graph() -> impl Strategy<Value = (u32, Vec<(u32, u32)>)> {
        (1u32..=12).prop_flat_map(|n| {
            (Just(n), proptest::collection::vec((1..=n, 1..=n), 0..30))
        })
    }

    proptest! {
        #[test]
        fn build_succeeds_iff_acyclic((n, edges) in graph()) {
            let result = CurriculumDag::build(courses(n), &edges, vec![]);
            prop_assert_eq!(result.is_ok(), !dfs_has_cycle(n, &edges));
            if let Err(CurriculumError::CycleDetected(cycle)) = result {
                prop_assert!(cycle.len() >= 2);
                prop_assert_eq!(cycle.first(), cycle.last());
                for w in cycle.windows(2) {
                    prop_assert!(edges.contains(&(w[0], w[1])));
                }
            }
        }

        #[test]
        fn downstream_is_transitive((n, edges) in graph()) {
            let acyclic: Vec<_> = edges.into_iter().filter(|(a, b)| a < b).collect();
            let dag = CurriculumDag::build(courses(n), &acyclic, vec![]).unwrap();
            for v in 1..=n {
                let down = dag.downstream_blocked(v).unwrap();
                prop_assert!(!down.contains(&v));
                for &u in &down {
                    prop_assert!(dag.downstream_blocked(u).unwrap().is_subset(&down));
                }
            }
            let order = dag.topological_order();
            for (a, b) in dag.edges() {
                let pa = order.iter().position(|&c| c == a).unwrap();
                let pb = order.iter().position(|&c| c == b).unwrap();
                prop_assert!(pa < pb);
            }
        }
    }
}
