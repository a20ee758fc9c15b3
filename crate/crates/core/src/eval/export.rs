//! Embedding export: an `N x D` matrix in the `MSR1` container (empty band
//! list) and a label file with one line per row, multiple labels joined by `;`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::EvalError;
use crate::data::raster::{read_matrix_msr1, write_matrix_msr1};

const LABEL_SEP: char = ';';

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn export_embeddings(
    embeddings: &Array2<f32>,
    labels: &[Vec<String>],
    matrix_path: &Path,
    labels_path: &Path,
) -> Result<(), EvalError> {
    if embeddings.nrows() != labels.len() {
        return Err(EvalError::Shape(format!(
            "{} embeddings for {} label rows",
            embeddings.nrows(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().flatten().find(|l| l.contains(LABEL_SEP) || l.contains('\n')) {
        return Err(EvalError::Shape(format!("label {bad:?} contains a separator")));
    }
    let f = File::create(matrix_path).map_err(io(matrix_path))?;
    write_matrix_msr1(BufWriter::new(f), embeddings).map_err(io(matrix_path))?;
    let f = File::create(labels_path).map_err(io(labels_path))?;
    let mut w = BufWriter::new(f);
    for l in labels {
        writeln!(w, "{}", l.join(&LABEL_SEP.to_string())).map_err(io(labels_path))?;
    }
    w.flush().map_err(io(labels_path))
}

pub fn import_embeddings(matrix_path: &Path, labels_path: &Path) -> Result<(Array2<f32>, Vec<Vec<String>>), EvalError> {
    let f = File::open(matrix_path).map_err(io(matrix_path))?;
    let m = read_matrix_msr1(BufReader::new(f))?;
    let f = File::open(labels_path).map_err(io(labels_path))?;
    let labels = BufReader::new(f)
        .lines()
        .map(|l| l.map(|l| l.split(LABEL_SEP).map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(io(labels_path))?;
    if labels.len() != m.nrows() {
        return Err(EvalError::Shape(format!(
            "{} rows in {} but {} label lines in {}",
            m.nrows(),
            matrix_path.display(),
            labels.len(),
            labels_path.display()
        )));
    }
    Ok((m, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, lp) = (dir.path().join("e.msr"), dir.path().join("l.txt"));
        let e = array![[0.6f32, 0.8], [1.0, 0.0], [0.0, -1.0]];
        let l = vec![vec!["a".to_string()], vec!["b".into(), "urban area".into()], vec!["a".into()]];
        export_embeddings(&e, &l, &mp, &lp).unwrap();
        let (e2, l2) = import_embeddings(&mp, &lp).unwrap();
        assert_eq!(e, e2);
        assert_eq!(l, l2);
    }

    #[test]
    fn errors_carry_paths() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.msr");
        let err = import_embeddings(&missing, &dir.path().join("x")).unwrap_err();
        assert!(err.to_string().contains("missing.msr"));
        let e = array![[1.0f32]];
        assert!(export_embeddings(&e, &[], &missing, &missing).is_err());
        let bad = vec![vec!["a;b".to_string()]];
        assert!(export_embeddings(&e, &bad, &missing, &missing).is_err());
    }
}
