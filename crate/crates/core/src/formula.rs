//! Propositional formula AST, a small constraint DSL, assignment evaluation,
//! and exhaustive satisfying-assignment enumeration.
//!
//! Grammar accepted by [`parse_formula`]:
//!
//! ```text
//! expr    := iff
//! iff     := implies ( '<->' iff )?
//! implies := or ( '->' implies )?          // right-associative
//! or      := and ( '|' and )*
//! and     := unary ( '&' unary )*
//! unary   := '!' unary | primary
//! primary := IDENT | 'true' | 'false' | '(' expr ')'
//! IDENT   := [A-Za-z_][A-Za-z0-9_,.]*
//! ```
//!
//! Variables are interned into a [`VarTable`] in first-occurrence order.
//! [`print_formula`] emits the same grammar and round-trips structurally.

use thiserror::Error;

/// Upper bound on variable count for exhaustive enumeration.
pub const DEFAULT_MAX_VARS: usize = 20;

/// Truth-value map over variable ids; index j holds the value of variable j.
pub type Assignment = Vec<bool>;

#[derive(Debug, Error, PartialEq)]
pub enum FormulaError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("empty formula text")]
    EmptyInput,
    #[error("assignment has {actual} values but the formula expects {expected}")]
    AssignmentLength { expected: usize, actual: usize },
    #[error("formula has {count} variables, exceeding the enumeration cap of {max}")]
    TooManyVariables { count: usize, max: usize },
}

/// Propositional formula over dense variable ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    False,
    Var(usize),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn var(id: usize) -> Self {
        Formula::Var(id)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(items: Vec<Formula>) -> Self {
        Formula::And(items)
    }

    pub fn or(items: Vec<Formula>) -> Self {
        Formula::Or(items)
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn iff(a: Formula, b: Formula) -> Self {
        Formula::Iff(Box::new(a), Box::new(b))
    }

    /// A positive or negated variable.
    pub fn literal(id: usize, polarity: bool) -> Self {
        if polarity {
            Formula::Var(id)
        } else {
            Formula::not(Formula::Var(id))
        }
    }

    /// Largest variable id occurring in the formula, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Formula::True | Formula::False => None,
            Formula::Var(id) => Some(*id),
            Formula::Not(f) => f.max_var(),
            Formula::And(items) | Formula::Or(items) => {
                items.iter().filter_map(|f| f.max_var()).max()
            }
            Formula::Implies(a, b) | Formula::Iff(a, b) => a.max_var().max(b.max_var()),
        }
    }

    fn eval_unchecked(&self, assignment: &[bool]) -> bool {
        match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Var(id) => assignment[*id],
            Formula::Not(f) => !f.eval_unchecked(assignment),
            Formula::And(items) => items.iter().all(|f| f.eval_unchecked(assignment)),
            Formula::Or(items) => items.iter().any(|f| f.eval_unchecked(assignment)),
            Formula::Implies(a, b) => !a.eval_unchecked(assignment) || b.eval_unchecked(assignment),
            Formula::Iff(a, b) => a.eval_unchecked(assignment) == b.eval_unchecked(assignment),
        }
    }

    /// Standard propositional semantics; `Implies(a, b)` is `!a | b`.
    pub fn evaluate(&self, assignment: &[bool]) -> Result<bool, FormulaError> {
        if let Some(max) = self.max_var() {
            if max >= assignment.len() {
                return Err(FormulaError::AssignmentLength {
                    expected: max + 1,
                    actual: assignment.len(),
                });
            }
        }
        Ok(self.eval_unchecked(assignment))
    }

    /// All and only satisfying assignments over `num_vars` variables, in
    /// lexicographic order (variable 0 varies slowest, false before true).
    pub fn satisfying_assignments(&self, num_vars: usize) -> Result<Vec<Assignment>, FormulaError> {
        self.satisfying_assignments_capped(num_vars, DEFAULT_MAX_VARS)
    }

    /// As [`satisfying_assignments`](Self::satisfying_assignments) with an explicit cap.
    pub fn satisfying_assignments_capped(
        &self,
        num_vars: usize,
        max_vars: usize,
    ) -> Result<Vec<Assignment>, FormulaError> {
        if num_vars > max_vars {
            return Err(FormulaError::TooManyVariables {
                count: num_vars,
                max: max_vars,
            });
        }
        if let Some(max) = self.max_var() {
            if max >= num_vars {
                return Err(FormulaError::AssignmentLength {
                    expected: max + 1,
                    actual: num_vars,
                });
            }
        }
        let mut out = Vec::new();
        let mut assignment = vec![false; num_vars];
        for bits in 0u64..(1u64 << num_vars) {
            for (j, slot) in assignment.iter_mut().enumerate() {
                *slot = (bits >> (num_vars - 1 - j)) & 1 == 1;
            }
            if self.eval_unchecked(&assignment) {
                out.push(assignment.clone());
            }
        }
        Ok(out)
    }

    /// `self ∧ l₁ ∧ … ∧ lₖ` where `lᵢ` is `Var` or `Not(Var)` per the boolean.
    /// Empty evidence returns the formula unchanged.
    pub fn conjoin_evidence(self, evidence: &[(usize, bool)]) -> Formula {
        if evidence.is_empty() {
            return self;
        }
        let mut items = Vec::with_capacity(1 + evidence.len());
        items.push(self);
        for &(id, polarity) in evidence {
            items.push(Formula::literal(id, polarity));
        }
        Formula::And(items)
    }
}

/// Variable registry mapping names to dense ids in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VarTable {
    names: Vec<String>,
}

impl VarTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id of `name`, interning it if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(id) = self.lookup(name) {
            return id;
        }
        self.names.push(name.to_string());
        self.names.len() - 1
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }
}

impl<S: AsRef<str>> FromIterator<S> for VarTable {
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        let mut table = VarTable::new();
        for name in iter {
            table.intern(name.as_ref());
        }
        table
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Implies,
    Iff,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, FormulaError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '!' => {
                tokens.push((i, Token::Not));
                i += 1;
            }
            '&' => {
                tokens.push((i, Token::And));
                i += 1;
            }
            '|' => {
                tokens.push((i, Token::Or));
                i += 1;
            }
            '(' => {
                tokens.push((i, Token::LParen));
                i += 1;
            }
            ')' => {
                tokens.push((i, Token::RParen));
                i += 1;
            }
            '-' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    tokens.push((i, Token::Implies));
                    i += 2;
                } else {
                    return Err(FormulaError::Syntax {
                        position: i,
                        message: "expected '->'".into(),
                    });
                }
            }
            '<' => {
                if bytes.get(i + 1) == Some(&b'-') && bytes.get(i + 2) == Some(&b'>') {
                    tokens.push((i, Token::Iff));
                    i += 3;
                } else {
                    return Err(FormulaError::Syntax {
                        position: i,
                        message: "expected '<->'".into(),
                    });
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let c = bytes[i] as char;
                    if c.is_ascii_alphanumeric() || c == '_' || c == ',' || c == '.' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let word = &text[start..i];
                let token = match word {
                    "true" => Token::True,
                    "false" => Token::False,
                    _ => Token::Ident(word.to_string()),
                };
                tokens.push((start, token));
            }
            other => {
                return Err(FormulaError::Syntax {
                    position: i,
                    message: format!("unexpected character '{other}'"),
                });
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
    table: &'a mut VarTable,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn advance(&mut self) -> Option<(usize, Token)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn parse_iff(&mut self) -> Result<Formula, FormulaError> {
        let lhs = self.parse_implies()?;
        if self.peek() == Some(&Token::Iff) {
            self.advance();
            let rhs = self.parse_iff()?;
            return Ok(Formula::iff(lhs, rhs));
        }
        Ok(lhs)
    }

    fn parse_implies(&mut self) -> Result<Formula, FormulaError> {
        let lhs = self.parse_or()?;
        if self.peek() == Some(&Token::Implies) {
            self.advance();
            let rhs = self.parse_implies()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn parse_or(&mut self) -> Result<Formula, FormulaError> {
        let first = self.parse_and()?;
        if self.peek() != Some(&Token::Or) {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.peek() == Some(&Token::Or) {
            self.advance();
            items.push(self.parse_and()?);
        }
        Ok(Formula::Or(items))
    }

    fn parse_and(&mut self) -> Result<Formula, FormulaError> {
        let first = self.parse_unary()?;
        if self.peek() != Some(&Token::And) {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.peek() == Some(&Token::And) {
            self.advance();
            items.push(self.parse_unary()?);
        }
        Ok(Formula::And(items))
    }

    fn parse_unary(&mut self) -> Result<Formula, FormulaError> {
        if self.peek() == Some(&Token::Not) {
            self.advance();
            return Ok(Formula::not(self.parse_unary()?));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Formula, FormulaError> {
        let position = self.here();
        match self.advance() {
            Some((_, Token::Ident(name))) => Ok(Formula::Var(self.table.intern(&name))),
            Some((_, Token::True)) => Ok(Formula::True),
            Some((_, Token::False)) => Ok(Formula::False),
            Some((_, Token::LParen)) => {
                let inner = self.parse_iff()?;
                match self.advance() {
                    Some((_, Token::RParen)) => Ok(inner),
                    other => Err(FormulaError::Syntax {
                        position: other.map_or(self.end, |(p, _)| p),
                        message: "expected ')'".into(),
                    }),
                }
            }
            Some((p, t)) => Err(FormulaError::Syntax {
                position: p,
                message: format!("unexpected token {t:?}"),
            }),
            None => Err(FormulaError::Syntax {
                position,
                message: "unexpected end of input".into(),
            }),
        }
    }
}

/// Parse DSL text, interning variables into `table` in first-occurrence order.
pub fn parse_formula(text: &str, table: &mut VarTable) -> Result<Formula, FormulaError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(FormulaError::EmptyInput);
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
        table,
    };
    let formula = parser.parse_iff()?;
    if let Some((p, t)) = parser.advance() {
        return Err(FormulaError::Syntax {
            position: p,
            message: format!("trailing token {t:?}"),
        });
    }
    Ok(formula)
}

// Precedence levels for the printer; higher binds tighter.
const PREC_IFF: u8 = 0;
const PREC_IMPLIES: u8 = 1;
const PREC_OR: u8 = 2;
const PREC_AND: u8 = 3;
const PREC_UNARY: u8 = 4;

fn print_into(f: &Formula, table: &VarTable, min_prec: u8, out: &mut String) {
    let prec = match f {
        Formula::True | Formula::False | Formula::Var(_) => PREC_UNARY,
        Formula::Not(_) => PREC_UNARY,
        Formula::And(_) => PREC_AND,
        Formula::Or(_) => PREC_OR,
        Formula::Implies(_, _) => PREC_IMPLIES,
        Formula::Iff(_, _) => PREC_IFF,
    };
    let parens = prec < min_prec;
    if parens {
        out.push('(');
    }
    match f {
        Formula::True => out.push_str("true"),
        Formula::False => out.push_str("false"),
        Formula::Var(id) => match table.name(*id) {
            Some(name) => out.push_str(name),
            None => out.push_str(&format!("v{id}")),
        },
        Formula::Not(inner) => {
            out.push('!');
            // Parenthesize anything below unary so `!` re-parses onto the
            // same subtree.
            match inner.as_ref() {
                Formula::True | Formula::False | Formula::Var(_) | Formula::Not(_) => {
                    print_into(inner, table, PREC_UNARY, out)
                }
                _ => {
                    out.push('(');
                    print_into(inner, table, PREC_IFF, out);
                    out.push(')');
                }
            }
        }
        Formula::And(items) => {
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(" & ");
                }
                print_into(item, table, PREC_UNARY, out);
            }
        }
        Formula::Or(items) => {
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(" | ");
                }
                print_into(item, table, PREC_AND, out);
            }
        }
        Formula::Implies(a, b) => {
            print_into(a, table, PREC_OR, out);
            out.push_str(" -> ");
            print_into(b, table, PREC_IMPLIES, out);
        }
        Formula::Iff(a, b) => {
            print_into(a, table, PREC_IMPLIES, out);
            out.push_str(" <-> ");
            print_into(b, table, PREC_IFF, out);
        }
    }
    if parens {
        out.push(')');
    }
}

/// Emit DSL text that re-parses to a structurally identical AST.
pub fn print_formula(f: &Formula, table: &VarTable) -> String {
    let mut out = String::new();
    print_into(f, table, PREC_IFF, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(text: &str) -> (Formula, VarTable) {
        let mut table = VarTable::new();
        let f = parse_formula(text, &mut table).unwrap();
        (f, table)
    }

    #[test]
    fn parses_implication() {
        let (f, table) = parsed("IsAflower -> IsMortal");
        assert_eq!(f, Formula::implies(Formula::Var(0), Formula::Var(1)));
        assert_eq!(table.name(0), Some("IsAflower"));
        assert_eq!(table.name(1), Some("IsMortal"));
    }

    #[test]
    fn parses_negated_literal_disjunction() {
        let (f, _) = parsed("!a | b");
        assert_eq!(
            f,
            Formula::Or(vec![Formula::not(Formula::Var(0)), Formula::Var(1)])
        );
    }

    #[test]
    fn implies_is_right_associative() {
        let (f, _) = parsed("a -> b -> c");
        assert_eq!(
            f,
            Formula::implies(
                Formula::Var(0),
                Formula::implies(Formula::Var(1), Formula::Var(2))
            )
        );
    }

    #[test]
    fn precedence_not_and_or() {
        let (f, _) = parsed("!a & b | c");
        assert_eq!(
            f,
            Formula::Or(vec![
                Formula::And(vec![Formula::not(Formula::Var(0)), Formula::Var(1)]),
                Formula::Var(2)
            ])
        );
    }

    #[test]
    fn comma_identifiers() {
        let (f, table) = parsed("IsA,bird -> CapableOf,fly");
        assert_eq!(f, Formula::implies(Formula::Var(0), Formula::Var(1)));
        assert_eq!(table.name(0), Some("IsA,bird"));
        assert_eq!(table.name(1), Some("CapableOf,fly"));
    }

    #[test]
    fn rejects_empty_input() {
        let mut table = VarTable::new();
        assert_eq!(parse_formula("  ", &mut table), Err(FormulaError::EmptyInput));
    }

    #[test]
    fn syntax_error_carries_position() {
        let mut table = VarTable::new();
        match parse_formula("a -> ->", &mut table) {
            Err(FormulaError::Syntax { position, .. }) => assert_eq!(position, 5),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_implication_cases() {
        let (f, _) = parsed("a -> b");
        assert_eq!(f.evaluate(&[true, false]), Ok(false));
        assert_eq!(f.evaluate(&[false, false]), Ok(true));
        assert_eq!(f.evaluate(&[true, true]), Ok(true));
    }

    #[test]
    fn evaluate_tautology() {
        let (f, _) = parsed("a | !a");
        assert_eq!(f.evaluate(&[true]), Ok(true));
        assert_eq!(f.evaluate(&[false]), Ok(true));
    }

    #[test]
    fn evaluate_rejects_short_assignment() {
        let (f, _) = parsed("a -> b");
        assert_eq!(
            f.evaluate(&[true]),
            Err(FormulaError::AssignmentLength {
                expected: 2,
                actual: 1
            })
        );
    }

    #[test]
    fn satisfying_assignments_implication() {
        let (f, _) = parsed("a -> b");
        let models = f.satisfying_assignments(2).unwrap();
        assert_eq!(
            models,
            vec![
                vec![false, false],
                vec![false, true],
                vec![true, true],
            ]
        );
    }

    #[test]
    fn satisfying_assignments_grounded_implication() {
        let (f, _) = parsed("(a -> b) & a");
        let models = f.satisfying_assignments(2).unwrap();
        assert_eq!(models, vec![vec![true, true]]);
    }

    #[test]
    fn satisfying_assignments_contradiction_is_empty() {
        let (f, _) = parsed("a & !a");
        assert!(f.satisfying_assignments(1).unwrap().is_empty());
    }

    #[test]
    fn enumeration_respects_cap() {
        let f = Formula::Var(20);
        assert_eq!(
            f.satisfying_assignments(21),
            Err(FormulaError::TooManyVariables { count: 21, max: 20 })
        );
    }

    #[test]
    fn conjoin_evidence_builds_unit_conjunction() {
        let (f, _) = parsed("a -> b");
        let grounded = f.clone().conjoin_evidence(&[(0, true)]);
        assert_eq!(grounded, Formula::And(vec![f, Formula::Var(0)]));
    }

    #[test]
    fn conjoin_empty_evidence_is_identity() {
        let (f, _) = parsed("a -> b");
        assert_eq!(f.clone().conjoin_evidence(&[]), f);
    }

    #[test]
    fn conjoin_contradictory_evidence_has_no_models() {
        let f = Formula::Var(0).conjoin_evidence(&[(0, false)]);
        assert!(f.satisfying_assignments(1).unwrap().is_empty());
    }

    #[test]
    fn print_round_trips() {
        for text in [
            "a -> b -> c",
            "(a -> b) -> c",
            "!a & b | c & !(d -> e)",
            "a <-> b <-> !c",
            "(a <-> b) <-> c",
            "a & b & c",
            "true -> a | false",
            "!!a",
        ] {
            let (f, table) = parsed(text);
            let printed = print_formula(&f, &table);
            let mut table2 = VarTable::new();
            let reparsed = parse_formula(&printed, &mut table2).unwrap();
            assert_eq!(f, reparsed, "round-trip failed for {text} -> {printed}");
        }
    }
}
