//! The model file format, plus generation and DOT export in submodules.
//!
//! A document is a sequence of sections:
//!
//! ```text
//! discount 0.9
//! var X { true false }
//! var Y { true false }
//! reward (test Y (true (leaf 1)) (false (leaf 0)))
//! action flip {
//!   cpt X' [parents: X] (test X (true (leaf 0.9 0.1)) (false (leaf 0.3 0.7)))
//!   cpt Y' [parents: X' Y] (...)
//! }
//! ```
//!
//! Trees are s-expressions: `(leaf <number>...)` or `(test <ref> (<value>
//! <tree>)...)`, where a `<ref>` is a variable name, primed for its
//! post-action copy. Every domain value must appear exactly once under a
//! test; branch order in the file does not matter. The `parents:` clause is
//! optional, with or without brackets; when omitted, the variables the tree
//! tests are declared as the parents. Variables must be declared before the
//! sections that mention them.

pub mod dot;
pub mod gen;

use thiserror::Error;

use crate::model::{validate, ActionNetwork, Cpt, Diagnostic, MdpModel};
use crate::trees::{reduce, Context, DecisionTree, Variable, VariableRef};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ModelLoadError {
    #[error("{0}")]
    Syntax(#[from] ParseError),
    #[error("invalid model:\n{}", format_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Word(String),
    Open,
    Close,
    BraceOpen,
    BraceClose,
    BracketOpen,
    BracketClose,
}

#[derive(Debug, Clone, PartialEq)]
struct Token {
    kind: TokenKind,
    line: usize,
    column: usize,
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !"(){}[]".contains(c)
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut line = 1;
    let mut column = 1;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        let (tok_line, tok_column) = (line, column);
        if c == '\n' {
            line += 1;
            column = 1;
            continue;
        }
        column += 1;
        if c.is_whitespace() {
            continue;
        }
        let kind = match c {
            '#' => {
                while chars.next_if(|&c| c != '\n').is_some() {
                    column += 1;
                }
                continue;
            }
            '(' => TokenKind::Open,
            ')' => TokenKind::Close,
            '{' => TokenKind::BraceOpen,
            '}' => TokenKind::BraceClose,
            '[' => TokenKind::BracketOpen,
            ']' => TokenKind::BracketClose,
            _ => {
                let mut word = String::from(c);
                while let Some(&next) = chars.peek() {
                    if is_word_char(next) {
                        word.push(next);
                        chars.next();
                        column += 1;
                    } else {
                        break;
                    }
                }
                TokenKind::Word(word)
            }
        };
        tokens.push(Token { kind, line: tok_line, column: tok_column });
    }
    tokens
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end_line: usize,
}

impl<'a> Parser<'a> {
    fn new(tokens: &'a [Token]) -> Self {
        let end_line = tokens.last().map_or(1, |t| t.line);
        Parser { tokens, pos: 0, end_line }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let (line, column) = match self.tokens.get(self.pos) {
            Some(t) => (t.line, t.column),
            None => (self.end_line, 1),
        };
        ParseError { line, column, message: message.into() }
    }

    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn advance(&mut self) -> Option<&TokenKind> {
        let tok = self.tokens.get(self.pos).map(|t| &t.kind);
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&kind) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn word(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(TokenKind::Word(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    fn number(&mut self, what: &str) -> Result<f64, ParseError> {
        let err = self.error(format!("expected {what}"));
        let word = self.word(what)?;
        word.parse().map_err(|_| err)
    }
}

/// `name` for a pre-action reference, `name'` for post-action.
fn split_ref(word: &str) -> (&str, bool) {
    match word.strip_suffix('\'') {
        Some(name) => (name, true),
        None => (word, false),
    }
}

struct VarTable {
    variables: Vec<Variable>,
}

impl VarTable {
    fn resolve(&self, parser: &Parser, word: &str) -> Result<VariableRef, ParseError> {
        let (name, primed) = split_ref(word);
        let var = self
            .variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| parser.error(format!("unknown variable `{name}`")))?;
        Ok(if primed { VariableRef::post(var) } else { VariableRef::pre(var) })
    }
}

/// Parse one tree. Leaf payloads are whatever numbers follow the `leaf`
/// keyword; the caller decides how many are sensible.
fn parse_tree(parser: &mut Parser, table: &VarTable) -> Result<DecisionTree<Vec<f64>>, ParseError> {
    parser.expect(TokenKind::Open, "`(`")?;
    let keyword = parser.word("`leaf` or `test`")?;
    match keyword.as_str() {
        "leaf" => {
            let mut payload = Vec::new();
            while parser.peek() != Some(&TokenKind::Close) {
                payload.push(parser.number("a number")?);
            }
            parser.expect(TokenKind::Close, "`)`")?;
            if payload.is_empty() {
                return Err(parser.error("leaf carries no numbers"));
            }
            Ok(DecisionTree::Leaf(payload))
        }
        "test" => {
            let test_word = parser.word("a variable reference")?;
            let test = table.resolve(parser, &test_word)?;
            let values = &table.variables[test.var].values;
            let mut children: Vec<Option<DecisionTree<Vec<f64>>>> = vec![None; values.len()];
            while parser.peek() == Some(&TokenKind::Open) {
                parser.advance();
                let value_word = parser.word("a domain value")?;
                let Some(idx) = values.iter().position(|v| *v == value_word) else {
                    return Err(parser.error(format!(
                        "`{value_word}` is not a value of `{}`",
                        table.variables[test.var].name
                    )));
                };
                if children[idx].is_some() {
                    return Err(parser.error(format!("branch for `{value_word}` appears twice")));
                }
                children[idx] = Some(parse_tree(parser, table)?);
                parser.expect(TokenKind::Close, "`)`")?;
            }
            parser.expect(TokenKind::Close, "`)`")?;
            if let Some(missing) = children.iter().position(|c| c.is_none()) {
                return Err(parser.error(format!(
                    "no branch for `{}` of `{}`",
                    values[missing], table.variables[test.var].name
                )));
            }
            Ok(DecisionTree::Node {
                test,
                children: children.into_iter().map(|c| c.unwrap()).collect(),
            })
        }
        other => Err(parser.error(format!("expected `leaf` or `test`, found `{other}`"))),
    }
}

fn scalar_leaves(
    parser: &Parser,
    tree: DecisionTree<Vec<f64>>,
    what: &str,
) -> Result<DecisionTree<f64>, ParseError> {
    let mut bad = false;
    let mapped = tree.map_leaves(&mut |payload: &Vec<f64>| {
        if payload.len() != 1 {
            bad = true;
        }
        payload[0]
    });
    if bad {
        Err(parser.error(format!("{what} leaves carry exactly one number")))
    } else {
        Ok(mapped)
    }
}

fn parse_cpt(
    parser: &mut Parser,
    table: &VarTable,
) -> Result<(usize, Cpt), ParseError> {
    let target_word = parser.word("a primed variable")?;
    let target = table.resolve(parser, &target_word)?;
    if !target.is_post() {
        return Err(parser.error(format!(
            "`{target_word}` names the pre-action variable; distributions are for `{target_word}'`"
        )));
    }
    let mut declared: Option<Vec<VariableRef>> = None;
    let bracketed = parser.peek() == Some(&TokenKind::BracketOpen);
    if bracketed {
        parser.advance();
    }
    if bracketed || matches!(parser.peek(), Some(TokenKind::Word(w)) if w == "parents:") {
        let keyword = parser.word("`parents:`")?;
        if keyword != "parents:" {
            return Err(parser.error("expected `parents:`"));
        }
        let mut parents = Vec::new();
        loop {
            match parser.peek() {
                Some(TokenKind::Word(w)) => {
                    let w = w.clone();
                    parser.advance();
                    parents.push(table.resolve(parser, &w)?);
                }
                Some(TokenKind::BracketClose) if bracketed => {
                    parser.advance();
                    break;
                }
                Some(TokenKind::Open) if !bracketed => break,
                _ => return Err(parser.error("expected a parent reference")),
            }
        }
        declared = Some(parents);
    }
    let tree = parse_tree(parser, table)?;
    let tree = reduce(&tree, &Context::new(), &table.variables);
    let parents = declared.unwrap_or_else(|| tree.tested_vars().into_iter().collect());
    Ok((target.var, Cpt::new(parents, tree)))
}

/// Parse a document into an unvalidated model. Most structural mistakes are
/// already errors here; anything expressible but ill-formed is left for
/// [`validate`].
fn parse_document(text: &str) -> Result<MdpModel, ParseError> {
    let tokens = tokenize(text);
    let mut parser = Parser::new(&tokens);
    let mut table = VarTable { variables: Vec::new() };
    let mut discount: Option<f64> = None;
    let mut reward: Option<DecisionTree<f64>> = None;
    let mut actions: Vec<ActionNetwork> = Vec::new();

    while parser.peek().is_some() {
        let section = parser.word("a section (`discount`, `var`, `reward`, `action`)")?;
        match section.as_str() {
            "discount" => {
                if discount.is_some() {
                    return Err(parser.error("`discount` declared twice"));
                }
                discount = Some(parser.number("a discount rate")?);
            }
            "var" => {
                let name = parser.word("a variable name")?;
                if name.ends_with('\'') {
                    return Err(parser.error("variable names must not end with `'`"));
                }
                parser.expect(TokenKind::BraceOpen, "`{`")?;
                let mut values = Vec::new();
                while parser.peek() != Some(&TokenKind::BraceClose) {
                    values.push(parser.word("a domain value")?);
                }
                parser.expect(TokenKind::BraceClose, "`}`")?;
                table.variables.push(Variable { name, values });
            }
            "reward" => {
                if reward.is_some() {
                    return Err(parser.error("`reward` declared twice"));
                }
                let tree = parse_tree(&mut parser, &table)?;
                let tree = scalar_leaves(&parser, tree, "reward")?;
                reward = Some(reduce(&tree, &Context::new(), &table.variables));
            }
            "action" => {
                let name = parser.word("an action name")?;
                parser.expect(TokenKind::BraceOpen, "`{`")?;
                let mut cpts: Vec<Option<Cpt>> = vec![None; table.variables.len()];
                while parser.peek() != Some(&TokenKind::BraceClose) {
                    let keyword = parser.word("`cpt`")?;
                    if keyword != "cpt" {
                        return Err(parser.error(format!(
                            "expected `cpt` or `}}`, found `{keyword}`"
                        )));
                    }
                    let (var, cpt) = parse_cpt(&mut parser, &table)?;
                    if cpts[var].is_some() {
                        return Err(parser.error(format!(
                            "action `{name}` declares `{}'` twice",
                            table.variables[var].name
                        )));
                    }
                    cpts[var] = Some(cpt);
                }
                parser.expect(TokenKind::BraceClose, "`}`")?;
                if let Some(missing) = cpts.iter().position(|c| c.is_none()) {
                    return Err(parser.error(format!(
                        "action `{name}` has no distribution for `{}'`",
                        table.variables[missing].name
                    )));
                }
                actions.push(ActionNetwork {
                    name,
                    cpts: cpts.into_iter().map(|c| c.unwrap()).collect(),
                });
            }
            other => return Err(parser.error(format!("unknown section `{other}`"))),
        }
    }

    let discount = discount.ok_or_else(|| parser.error("document declares no `discount`"))?;
    let reward = reward.ok_or_else(|| parser.error("document declares no `reward`"))?;
    Ok(MdpModel { variables: table.variables, actions, reward, discount })
}

/// Parse and validate a model document.
pub fn parse_model(text: &str) -> Result<MdpModel, ModelLoadError> {
    let model = parse_document(text)?;
    let diags = validate(&model);
    if diags.is_empty() {
        Ok(model)
    } else {
        Err(ModelLoadError::Validation(diags))
    }
}

/// Parse a bare value tree (scalar leaves) against a model's variables.
pub fn parse_value_tree(text: &str, model: &MdpModel) -> Result<DecisionTree<f64>, ParseError> {
    let tokens = tokenize(text);
    let mut parser = Parser::new(&tokens);
    let table = VarTable { variables: model.variables.clone() };
    let tree = parse_tree(&mut parser, &table)?;
    if parser.peek().is_some() {
        return Err(parser.error("trailing input after the tree"));
    }
    let tree = scalar_leaves(&parser, tree, "value tree")?;
    Ok(reduce(&tree, &Context::new(), &model.variables))
}

fn render_ref(out: &mut String, vars: &[Variable], r: VariableRef) {
    out.push_str(&vars[r.var].name);
    if r.is_post() {
        out.push('\'');
    }
}

/// Serialize a tree in document syntax with a caller-chosen leaf renderer.
pub fn write_tree<L>(
    out: &mut String,
    tree: &DecisionTree<L>,
    vars: &[Variable],
    leaf: &mut impl FnMut(&L) -> String,
) {
    match tree {
        DecisionTree::Leaf(payload) => {
            out.push_str("(leaf ");
            out.push_str(&leaf(payload));
            out.push(')');
        }
        DecisionTree::Node { test, children } => {
            out.push_str("(test ");
            render_ref(out, vars, *test);
            for (value, child) in children.iter().enumerate() {
                out.push_str(" (");
                out.push_str(&vars[test.var].values[value]);
                out.push(' ');
                write_tree(out, child, vars, leaf);
                out.push(')');
            }
            out.push(')');
        }
    }
}

fn scalar(x: &f64) -> String {
    format!("{x}")
}

fn distribution(dist: &Vec<f64>) -> String {
    dist.iter().map(|p| format!("{p}")).collect::<Vec<_>>().join(" ")
}

/// Render a model as a document that parses back to it.
pub fn serialize_model(model: &MdpModel) -> String {
    let vars = &model.variables;
    let mut out = String::new();
    out.push_str(&format!("discount {}\n\n", model.discount));
    for v in vars {
        out.push_str(&format!("var {} {{ {} }}\n", v.name, v.values.join(" ")));
    }
    out.push_str("\nreward ");
    write_tree(&mut out, &model.reward, vars, &mut scalar);
    out.push('\n');
    for action in &model.actions {
        out.push_str(&format!("\naction {} {{\n", action.name));
        for (x, cpt) in action.cpts.iter().enumerate() {
            out.push_str(&format!("  cpt {}'", vars[x].name));
            if !cpt.parents.is_empty() {
                out.push_str(" [parents:");
                for p in &cpt.parents {
                    out.push(' ');
                    render_ref(&mut out, vars, *p);
                }
                out.push(']');
            }
            out.push(' ');
            write_tree(&mut out, &cpt.tree, vars, &mut distribution);
            out.push('\n');
        }
        out.push_str("}\n");
    }
    out
}
