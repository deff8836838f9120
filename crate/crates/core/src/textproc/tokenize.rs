/// Lower-cases, splits on whitespace and peels leading and trailing ASCII
/// punctuation off each chunk, one token per punctuation character.
/// Interior punctuation (`don't`, `555-0100`) stays inside the word.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lowered.split_whitespace() {
        push_chunk(chunk, &mut tokens);
    }
    tokens
}

fn push_chunk(chunk: &str, tokens: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let start = chars
        .iter()
        .position(|c| !c.is_ascii_punctuation())
        .unwrap_or(chars.len());
    let end = chars
        .iter()
        .rposition(|c| !c.is_ascii_punctuation())
        .map_or(start, |i| i + 1);
    for c in &chars[..start] {
        tokens.push(c.to_string());
    }
    if start < end {
        tokens.push(chars[start..end].iter().collect());
    }
    for c in &chars[end.max(start)..] {
        tokens.push(c.to_string());
    }
}

/// Number of whitespace-delimited words, the length measure used in statistics.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
