use super::EncoderError;

/// Word-level tokenizer: lowercases, splits on whitespace and detaches
/// punctuation. Digit runs stay whole, including inner `.` or `,`
/// separators (`12.5`, `1,000`).
pub fn tokenize(question: &str) -> Result<Vec<String>, EncoderError> {
    if question.trim().is_empty() {
        return Err(EncoderError::EmptyQuestion);
    }
    let mut tokens = Vec::new();
    for chunk in question.split_whitespace() {
        let chars: Vec<char> = chunk.to_lowercase().chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_ascii_digit() {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let joins_digits = (d == '.' || d == ',') && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
                    if d.is_ascii_digit() || joins_digits {
                        i += 1;
                    } else {
                        break;
                    }
                }
                tokens.push(chars[start..i].iter().collect());
            } else if c.is_alphanumeric() {
                let start = i;
                while i < chars.len() && chars[i].is_alphanumeric() && !chars[i].is_ascii_digit() {
                    i += 1;
                }
                tokens.push(chars[start..i].iter().collect());
            } else {
                tokens.push(c.to_string());
                i += 1;
            }
        }
    }
    Ok(tokens)
}
