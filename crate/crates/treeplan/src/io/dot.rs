//! Graphviz rendering of decision trees, one graph per tree. Internal
//! nodes are labeled with the tested variable (primed when post-action),
//! edges with domain values, leaves with whatever the caller renders.

use crate::trees::{DecisionTree, Variable};

/// Render to six significant digits, plain decimal notation.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn escape(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Serialize one tree as a DOT digraph named `name`.
pub fn export_dot<L>(
    tree: &DecisionTree<L>,
    vars: &[Variable],
    name: &str,
    leaf: &mut impl FnMut(&L) -> String,
) -> String {
    let mut out = format!("digraph \"{}\" {{\n", escape(name));
    out.push_str("  node [fontname=\"Helvetica\"];\n");
    let mut counter = 0;
    emit(tree, vars, leaf, &mut counter, &mut out);
    out.push_str("}\n");
    out
}

fn emit<L>(
    tree: &DecisionTree<L>,
    vars: &[Variable],
    leaf: &mut impl FnMut(&L) -> String,
    counter: &mut usize,
    out: &mut String,
) -> usize {
    let id = *counter;
    *counter += 1;
    match tree {
        DecisionTree::Leaf(payload) => {
            out.push_str(&format!("  n{id} [shape=box, label=\"{}\"];\n", escape(&leaf(payload))));
        }
        DecisionTree::Node { test, children } => {
            let prime = if test.is_post() { "'" } else { "" };
            out.push_str(&format!(
                "  n{id} [shape=ellipse, label=\"{}{prime}\"];\n",
                escape(&vars[test.var].name)
            ));
            for (value, child) in children.iter().enumerate() {
                let child_id = emit(child, vars, leaf, counter, out);
                out.push_str(&format!(
                    "  n{id} -> n{child_id} [label=\"{}\"];\n",
                    escape(&vars[test.var].values[value])
                ));
            }
        }
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::VariableRef;

    /// A tiny DOT syntax checker: tokenizes and matches the subset the
    /// exporter emits (digraph with node and edge statements carrying
    /// attribute lists). Rejects anything unbalanced or unquoted.
    fn check_dot(text: &str) -> Result<(), String> {
        #[derive(Debug, PartialEq)]
        enum Tok {
            Id(String),
            Str,
            LBrace,
            RBrace,
            LBracket,
            RBracket,
            Semi,
            Comma,
            Eq,
            Arrow,
        }
        let mut toks = Vec::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' => toks.push(Tok::LBrace),
                '}' => toks.push(Tok::RBrace),
                '[' => toks.push(Tok::LBracket),
                ']' => toks.push(Tok::RBracket),
                ';' => toks.push(Tok::Semi),
                ',' => toks.push(Tok::Comma),
                '=' => toks.push(Tok::Eq),
                '-' => match chars.next() {
                    Some('>') => toks.push(Tok::Arrow),
                    other => return Err(format!("stray `-` before {other:?}")),
                },
                '"' => {
                    let mut escaped = false;
                    loop {
                        match chars.next() {
                            None => return Err("unterminated string".into()),
                            Some('\\') if !escaped => escaped = true,
                            Some('"') if !escaped => break,
                            Some(_) => escaped = false,
                        }
                    }
                    toks.push(Tok::Str);
                }
                c if c.is_whitespace() => {}
                c if c.is_alphanumeric() || c == '_' => {
                    let mut id = String::from(c);
                    while let Some(&n) = chars.peek() {
                        if n.is_alphanumeric() || n == '_' {
                            id.push(n);
                            chars.next();
                        } else {
                            break;
                        }
                    }
                    toks.push(Tok::Id(id));
                }
                other => return Err(format!("unexpected character {other:?}")),
            }
        }

        let mut pos = 0;
        let id_or_str = |t: &Tok| matches!(t, Tok::Id(_) | Tok::Str);
        if !matches!(toks.get(pos), Some(Tok::Id(k)) if k == "digraph") {
            return Err("missing digraph keyword".into());
        }
        pos += 1;
        if toks.get(pos).is_some_and(id_or_str) {
            pos += 1;
        }
        if toks.get(pos) != Some(&Tok::LBrace) {
            return Err("missing opening brace".into());
        }
        pos += 1;
        while toks.get(pos) != Some(&Tok::RBrace) {
            if !toks.get(pos).is_some_and(id_or_str) {
                return Err(format!("statement must start with an id at token {pos}"));
            }
            pos += 1;
            if toks.get(pos) == Some(&Tok::Arrow) {
                pos += 1;
                if !toks.get(pos).is_some_and(id_or_str) {
                    return Err("arrow needs a target".into());
                }
                pos += 1;
            }
            if toks.get(pos) == Some(&Tok::LBracket) {
                pos += 1;
                while toks.get(pos) != Some(&Tok::RBracket) {
                    if !toks.get(pos).is_some_and(id_or_str) {
                        return Err("attribute name expected".into());
                    }
                    pos += 1;
                    if toks.get(pos) != Some(&Tok::Eq) {
                        return Err("attribute needs `=`".into());
                    }
                    pos += 1;
                    if !toks.get(pos).is_some_and(id_or_str) {
                        return Err("attribute value expected".into());
                    }
                    pos += 1;
                    if toks.get(pos) == Some(&Tok::Comma) {
                        pos += 1;
                    }
                }
                pos += 1;
            }
            if toks.get(pos) == Some(&Tok::Semi) {
                pos += 1;
            }
        }
        pos += 1;
        if pos != toks.len() {
            return Err("trailing tokens after closing brace".into());
        }
        Ok(())
    }

    #[test]
    fn single_leaf_renders_one_node() {
        let tree: DecisionTree<f64> = DecisionTree::Leaf(5.0);
        let dot = export_dot(&tree, &[], "value", &mut |v| sig6(*v));
        check_dot(&dot).unwrap();
        assert_eq!(dot.matches("n0").count(), 1);
        assert!(dot.contains("5.00000"));
        assert!(!dot.contains("->"));
    }

    #[test]
    fn node_and_leaf_counts_add_up() {
        let vars = vec![crate::trees::Variable::binary("X"), crate::trees::Variable::binary("Y")];
        let tree: DecisionTree<f64> = DecisionTree::Node {
            test: VariableRef::pre(1),
            children: vec![
                DecisionTree::Node {
                    test: VariableRef::post(0),
                    children: vec![DecisionTree::Leaf(1.0), DecisionTree::Leaf(0.25)],
                },
                DecisionTree::Leaf(0.0),
            ],
        };
        let dot = export_dot(&tree, &vars, "q", &mut |v| sig6(*v));
        check_dot(&dot).unwrap();
        // two internal nodes, three leaves
        for id in 0..5 {
            assert!(dot.contains(&format!("n{id} [")), "{dot}");
        }
        assert!(!dot.contains("n5 ["));
        assert_eq!(dot.matches("->").count(), 4);
        assert!(dot.contains("label=\"X'\""), "primed test label: {dot}");
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(5.0), "5.00000");
        assert_eq!(sig6(0.1234567), "0.123457");
        assert_eq!(sig6(123.4), "123.400");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(0.000123456449), "0.000123456");
    }

    #[test]
    fn checker_rejects_garbage() {
        assert!(check_dot("graph { }").is_err());
        assert!(check_dot("digraph { n0 [label=\"x]; }").is_err());
        assert!(check_dot("digraph { n0 -> ; }").is_err());
    }
}
