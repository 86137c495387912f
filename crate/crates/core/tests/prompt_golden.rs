//! The fully rendered prompt for one sample tweet, compared against a frozen
//! copy. Regenerate with `VAXKIT_BLESS=1 cargo test --test prompt_golden`
//! after an intentional wording change, then review the diff.

use std::path::PathBuf;

use vaxkit_core::taxonomy::LabelCatalog;
use vaxkit_core::zeroshot::{build_prompt, DecodingParams, PromptTemplate};

const SAMPLE_TWEET: &str =
    "They rushed this vaccine out in under a year and now Pfizer won't even release the trial data. No thanks.";

fn render() -> String {
    let bundle = build_prompt(
        SAMPLE_TWEET,
        &LabelCatalog::builtin(),
        &PromptTemplate::builtin(),
        &DecodingParams::default(),
        "gpt-3.5-turbo",
    );
    format!(
        "model: {}\nparams: {}\n\n--- system ---\n{}\n\n--- user ---\n{}\n",
        bundle.model_name,
        serde_json::to_string(&bundle.params).unwrap(),
        bundle.system_text,
        bundle.user_text
    )
}

#[test]
fn rendered_prompt_matches_golden_file() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/zero_shot_v1_prompt.txt");
    let rendered = render();
    if std::env::var_os("VAXKIT_BLESS").is_some() {
        std::fs::write(&path, &rendered).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file present");
    assert_eq!(rendered, golden, "rendered prompt drifted from {}", path.display());
}
