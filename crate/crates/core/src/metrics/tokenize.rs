/// Lowercases, turns every non-alphanumeric character into a space and splits
/// on whitespace. `"don't"` becomes `["don", "t"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}
