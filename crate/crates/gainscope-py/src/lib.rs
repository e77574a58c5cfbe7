use pyo3::prelude::*;

#[pymodule]
fn gainscope(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
