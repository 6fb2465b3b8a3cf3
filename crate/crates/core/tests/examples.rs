//! Runs every example's `run_example`.

macro_rules! example {
    ($name:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $name {
            include!($file);
        }
    };
}

example!(generate_network, "../examples/generate_network.rs");
example!(broken_space, "../examples/broken_space.rs");
example!(assemble_system, "../examples/assemble_system.rs");
example!(reference_solve, "../examples/reference_solve.rs");
example!(multilevel_preconditioner, "../examples/multilevel_preconditioner.rs");
example!(nested_iteration, "../examples/nested_iteration.rs");
example!(convergence_study, "../examples/convergence_study.rs");
example!(property_checks, "../examples/property_checks.rs");
example!(export_solution, "../examples/export_solution.rs");

#[test]
fn generate_network_runs() {
    generate_network::run_example().unwrap();
}

#[test]
fn broken_space_runs() {
    broken_space::run_example().unwrap();
}

#[test]
fn assemble_system_runs() {
    assemble_system::run_example().unwrap();
}

#[test]
fn reference_solve_runs() {
    reference_solve::run_example().unwrap();
}

#[test]
fn multilevel_preconditioner_runs() {
    multilevel_preconditioner::run_example().unwrap();
}

#[test]
fn nested_iteration_runs() {
    nested_iteration::run_example().unwrap();
}

#[test]
fn convergence_study_runs() {
    convergence_study::run_example().unwrap();
}

#[test]
fn property_checks_pass() {
    assert!(property_checks::run_example().unwrap());
}

#[test]
fn export_solution_writes_output() {
    let (vtk, mtx) = export_solution::run_example().unwrap();
    assert!(vtk > 0 && mtx > 0);
}
