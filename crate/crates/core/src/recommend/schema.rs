use serde_json::Value;

/// Keys that would leak model output to a client.
pub const HIDDEN_KEYS: [&str; 7] = [
    "score",
    "scores",
    "label",
    "labels",
    "probability",
    "coachable_probability",
    "prediction",
];

/// JSON-pointer paths of every forbidden key anywhere in `value`.
pub fn hidden_keys(value: &Value) -> Vec<String> {
    let mut found = Vec::new();
    walk(value, String::new(), &mut found);
    found
}

fn walk(value: &Value, path: String, found: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let child = format!("{path}/{k}");
                if HIDDEN_KEYS.contains(&k.to_ascii_lowercase().as_str()) {
                    found.push(child.clone());
                }
                walk(v, child, found);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                walk(v, format!("{path}/{i}"), found);
            }
        }
        _ => {}
    }
}
