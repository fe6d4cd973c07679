//! A 34-course, ten-semester civil engineering plan used by the synthetic
//! generator and the golden fixtures.

use super::{Course, CourseCode, CurriculumDag};

const PLAN: [&[(CourseCode, &str)]; 10] = [
    &[
        (1, "Análisis Matemático I"),
        (2, "Álgebra y Geometría Analítica"),
        (3, "Química General"),
        (4, "Sistemas de Representación"),
    ],
    &[
        (5, "Análisis Matemático II"),
        (7, "Física I"),
        (8, "Ingeniería y Sociedad"),
        (9, "Fundamentos de Informática"),
    ],
    &[
        (10, "Cálculo III"),
        (11, "Física II"),
        (12, "Cálculo Numérico"),
        (13, "Tecnología de los Materiales"),
    ],
    &[
        (14, "Probabilidad y Estadística"),
        (15, "Mecánica Racional"),
        (16, "Geología Básica"),
    ],
    &[
        (17, "Estabilidad I"),
        (18, "Mecánica de los Fluidos"),
        (19, "Topografía"),
        (20, "Estudio de Materiales I"),
    ],
    &[
        (21, "Estabilidad II"),
        (22, "Hidráulica Básica"),
        (23, "Geotecnia I"),
    ],
    &[
        (25, "Hormigón Armado I"),
        (26, "Estructuras Metálicas"),
        (27, "Vías de Comunicación I"),
    ],
    &[
        (28, "Hidrología"),
        (29, "Instalaciones Sanitarias"),
        (30, "Cimentaciones"),
    ],
    &[
        (32, "Hormigón Armado II"),
        (33, "Construcciones Civiles"),
        (34, "Planeamiento Urbano"),
    ],
    &[
        (35, "Organización y Gestión de Obras"),
        (36, "Ingeniería Legal"),
        (37, "Diseño y Construcción de Pavimentos"),
    ],
];

pub type CurriculumParts = (Vec<Course>, Vec<(CourseCode, CourseCode)>, Vec<Vec<CourseCode>>);

/// Courses, prerequisite edges and plan of the reference programme.
///
/// A course in semester `s` requires two neighbouring courses of semester
/// `s - 1` plus every course of semesters `s - 3` and `s - 4`.
pub fn civil_engineering_parts() -> CurriculumParts {
    let mut courses = Vec::new();
    let mut plan = Vec::new();
    for (s, semester) in PLAN.iter().enumerate() {
        plan.push(semester.iter().map(|(c, _)| *c).collect::<Vec<_>>());
        for (code, name) in semester.iter() {
            courses.push(Course::new(*code, *name, s as u32 + 1));
        }
    }
    let mut edges = Vec::new();
    for s in 1..plan.len() {
        let prev = &plan[s - 1];
        for (i, &course) in plan[s].iter().enumerate() {
            edges.push((prev[i % prev.len()], course));
            edges.push((prev[(i + 1) % prev.len()], course));
            for back in [3, 4] {
                if s >= back {
                    edges.extend(plan[s - back].iter().map(|&p| (p, course)));
                }
            }
        }
    }
    (courses, edges, plan)
}

pub fn civil_engineering() -> CurriculumDag {
    let (courses, edges, plan) = civil_engineering_parts();
    CurriculumDag::build(courses, &edges, plan).expect("reference curriculum is a valid DAG")
}
