//! Character-class helpers shared by the filters and the keyword tools.

/// CJK Unified Ideographs, Extension A and Compatibility Ideographs.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0xF900..=0xFAFF)
}

/// Splits text into keyword candidates: runs of CJK ideographs and runs of
/// alphanumeric non-CJK characters (lowercased). Everything else separates.
pub fn word_runs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_cjk = false;
    for c in text.chars() {
        let class = if is_cjk(c) {
            Some(true)
        } else if c.is_alphanumeric() {
            Some(false)
        } else {
            None
        };
        match class {
            Some(k) if cur.is_empty() || k == cur_cjk => {
                cur_cjk = k;
                cur.extend(c.to_lowercase());
            }
            Some(k) => {
                out.push(std::mem::take(&mut cur));
                cur_cjk = k;
                cur.extend(c.to_lowercase());
            }
            None => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
