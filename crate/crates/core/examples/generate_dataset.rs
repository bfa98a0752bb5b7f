//! Generate a small number-prediction dataset, show how labels are derived,
//! and round-trip it through the on-disk format.
//!
//!     cargo run --release --example generate_dataset -- [single|double] [out_dir]

use dynskip::data::{generate, label_oracle, read_dataset, write_dataset, DatasetSpec, Variant};

fn main() -> dynskip::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map_or(Ok(Variant::Single), |s| s.parse())?;
    let dir = args.get(1).map_or_else(|| std::env::temp_dir().join("dynskip-example-data"), Into::into);

    let spec = DatasetSpec {
        train: 1000,
        dev: 100,
        test: 100,
        ..DatasetSpec::reference(variant, 7)
    };
    let ds = generate(&spec)?;
    println!("{} task, T={}", variant.name(), spec.seq_len);
    for ex in ds.train.iter().take(5) {
        let p = ex.tokens[ex.tokens.len() - 1];
        let how = match variant {
            Variant::Single => format!("x[{p}] = {}", ex.tokens[p]),
            Variant::Double => {
                let q = ex.tokens[p];
                format!("x[x[{p}]] = x[{q}] = {}", ex.tokens[q])
            }
        };
        println!("  {:?} -> {}   ({how})", ex.tokens, ex.label);
        assert_eq!(label_oracle(&ex.tokens, variant), Ok(ex.label));
    }

    std::fs::create_dir_all(&dir).map_err(|e| dynskip::Error::io(&dir, e))?;
    write_dataset(&dir, &ds)?;
    let back = read_dataset(&dir)?;
    assert_eq!(back, ds);
    println!("wrote and re-read {} examples in {}", ds.train.len() + ds.dev.len() + ds.test.len(), dir.display());
    Ok(())
}
