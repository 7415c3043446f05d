//! Recursive-descent parser for the mini-language.

use thiserror::Error;

use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("parse error at {line}:{col}: expected {}; found {found}", expected.join(" or "))]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub expected: Vec<String>,
    pub found: String,
}

const MODIFIERS: &[&str] = &["public", "private", "protected", "static", "final"];

/// Parses a whole program. Also rejects duplicate class names and duplicate
/// (class, method) pairs since the mini-language has no overloading.
pub fn parse_program(source: &str) -> Result<MiniProgram, ParseError> {
    let tokens = tokenize(source)?;
    let mut parser = Parser { tokens, pos: 0 };
    let mut classes = Vec::new();
    while !parser.at_eof() {
        classes.push(parser.parse_class()?);
    }
    for (i, class) in classes.iter().enumerate() {
        if classes[..i].iter().any(|c| c.name == class.name) {
            return Err(ParseError {
                line: 0,
                col: 0,
                expected: vec!["a unique class name".to_string()],
                found: format!("duplicate class `{}`", class.name),
            });
        }
        for (j, method) in class.methods.iter().enumerate() {
            if class.methods[..j]
                .iter()
                .any(|m| m.lookup_name() == method.lookup_name())
            {
                return Err(ParseError {
                    line: 0,
                    col: 0,
                    expected: vec!["a unique method name per class".to_string()],
                    found: format!("duplicate method `{}.{}`", class.name, method.name),
                });
            }
        }
    }
    Ok(MiniProgram {
        source: source.to_string(),
        classes,
    })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &Token {
        let idx = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[idx]
    }

    fn advance(&mut self) -> Token {
        let token = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        token
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek().kind, TokenKind::Eof)
    }

    fn error(&self, expected: Vec<&str>) -> ParseError {
        let token = self.peek();
        ParseError {
            line: token.line,
            col: token.col,
            expected: expected.into_iter().map(String::from).collect(),
            found: token.kind.describe(),
        }
    }

    fn expect(&mut self, kind: &TokenKind, describe: &str) -> Result<Token, ParseError> {
        if std::mem::discriminant(&self.peek().kind) == std::mem::discriminant(kind) {
            Ok(self.advance())
        } else {
            Err(self.error(vec![describe]))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Token), ParseError> {
        match self.peek().kind.clone() {
            TokenKind::Ident(name) => {
                let token = self.advance();
                Ok((name, token))
            }
            _ => Err(self.error(vec![what])),
        }
    }

    fn ident_is(&self, text: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Ident(name) if name == text)
    }

    fn eat_ident(&mut self, text: &str) -> bool {
        if self.ident_is(text) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn parse_modifiers(&mut self) -> bool {
        let mut is_static = false;
        loop {
            match &self.peek().kind {
                TokenKind::Ident(name) if MODIFIERS.contains(&name.as_str()) => {
                    if name == "static" {
                        is_static = true;
                    }
                    self.advance();
                }
                _ => return is_static,
            }
        }
    }

    fn parse_class(&mut self) -> Result<ClassDecl, ParseError> {
        let start = self.peek().start;
        self.parse_modifiers();
        if !self.eat_ident("class") {
            return Err(self.error(vec!["`class`"]));
        }
        let (name, _) = self.expect_ident("class name")?;
        self.expect(&TokenKind::LBrace, "`{`")?;
        let mut fields = Vec::new();
        let mut methods = Vec::new();
        while !matches!(self.peek().kind, TokenKind::RBrace | TokenKind::Eof) {
            self.parse_member(&name, &mut fields, &mut methods)?;
        }
        let close = self.expect(&TokenKind::RBrace, "`}`")?;
        Ok(ClassDecl {
            name,
            fields,
            methods,
            span: Span {
                start,
                end: close.end,
            },
        })
    }

    fn parse_member(
        &mut self,
        class_name: &str,
        fields: &mut Vec<FieldDecl>,
        methods: &mut Vec<MethodDecl>,
    ) -> Result<(), ParseError> {
        let start = self.peek().start;
        let is_static = self.parse_modifiers();

        // Constructor: class name directly followed by a parameter list.
        if self.ident_is(class_name) && matches!(self.peek_at(1).kind, TokenKind::LParen) {
            let (name, _) = self.expect_ident("constructor name")?;
            let method = self.parse_method_rest(name.clone(), name, is_static, true, start)?;
            methods.push(method);
            return Ok(());
        }

        let (ty, _) = self.expect_ident("type name")?;
        let (name, _) = self.expect_ident("member name")?;
        match self.peek().kind {
            TokenKind::LParen => {
                let method = self.parse_method_rest(name, ty, is_static, false, start)?;
                methods.push(method);
                Ok(())
            }
            TokenKind::Assign => {
                self.advance();
                let init = self.parse_expr()?;
                let semi = self.expect(&TokenKind::Semi, "`;`")?;
                fields.push(FieldDecl {
                    name,
                    ty,
                    init: Some(init),
                    span: Span {
                        start,
                        end: semi.end,
                    },
                });
                Ok(())
            }
            TokenKind::Semi => {
                let semi = self.advance();
                fields.push(FieldDecl {
                    name,
                    ty,
                    init: None,
                    span: Span {
                        start,
                        end: semi.end,
                    },
                });
                Ok(())
            }
            _ => Err(self.error(vec!["`(`", "`=`", "`;`"])),
        }
    }

    fn parse_method_rest(
        &mut self,
        name: String,
        return_type: String,
        is_static: bool,
        is_constructor: bool,
        start: usize,
    ) -> Result<MethodDecl, ParseError> {
        self.expect(&TokenKind::LParen, "`(`")?;
        let mut params = Vec::new();
        if !matches!(self.peek().kind, TokenKind::RParen) {
            loop {
                let (ty, _) = self.expect_ident("parameter type")?;
                let (pname, _) = self.expect_ident("parameter name")?;
                params.push(ParamDecl { name: pname, ty });
                if matches!(self.peek().kind, TokenKind::Comma) {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        let mut sig_end = self.expect(&TokenKind::RParen, "`)`")?.end;
        if self.eat_ident("throws") {
            loop {
                let (_, token) = self.expect_ident("exception type")?;
                sig_end = token.end;
                if matches!(self.peek().kind, TokenKind::Comma) {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        let body = self.parse_block()?;
        let end = self.tokens[self.pos - 1].end;
        Ok(MethodDecl {
            name,
            params,
            return_type,
            is_static,
            is_constructor,
            body,
            span: Span { start, end },
            sig_span: Span {
                start,
                end: sig_end,
            },
        })
    }

    fn parse_block(&mut self) -> Result<Block, ParseError> {
        self.expect(&TokenKind::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        while !matches!(self.peek().kind, TokenKind::RBrace | TokenKind::Eof) {
            stmts.push(self.parse_stmt()?);
        }
        self.expect(&TokenKind::RBrace, "`}`")?;
        Ok(Block { stmts })
    }

    fn parse_stmt(&mut self) -> Result<Stmt, ParseError> {
        let start = self.peek().start;
        if self.ident_is("if") {
            return self.parse_if();
        }
        if self.eat_ident("return") {
            if matches!(self.peek().kind, TokenKind::Semi) {
                let semi = self.advance();
                return Ok(Stmt::Return {
                    value: None,
                    span: Span {
                        start,
                        end: semi.end,
                    },
                });
            }
            let value = self.parse_expr()?;
            let semi = self.expect(&TokenKind::Semi, "`;`")?;
            return Ok(Stmt::Return {
                value: Some(value),
                span: Span {
                    start,
                    end: semi.end,
                },
            });
        }
        if self.eat_ident("throw") {
            let value = self.parse_expr()?;
            let semi = self.expect(&TokenKind::Semi, "`;`")?;
            return Ok(Stmt::Throw {
                value,
                span: Span {
                    start,
                    end: semi.end,
                },
            });
        }

        // Two identifiers in a row start a local declaration; the grammar has
        // no multi-token types.
        if matches!(self.peek().kind, TokenKind::Ident(_))
            && matches!(self.peek_at(1).kind, TokenKind::Ident(_))
            && !self.ident_is("new")
        {
            let (ty, _) = self.expect_ident("type name")?;
            let (name, _) = self.expect_ident("variable name")?;
            let init = if matches!(self.peek().kind, TokenKind::Assign) {
                self.advance();
                Some(self.parse_expr()?)
            } else {
                None
            };
            let semi = self.expect(&TokenKind::Semi, "`;`")?;
            return Ok(Stmt::Local {
                ty,
                name,
                init,
                span: Span {
                    start,
                    end: semi.end,
                },
            });
        }

        let expr = self.parse_expr()?;
        if matches!(self.peek().kind, TokenKind::Assign) {
            let target = match &expr {
                Expr::Var(name, _) => AssignTarget::Var(name.clone()),
                Expr::Field { object, name, .. } => match object.as_ref() {
                    Expr::Var(obj, _) => AssignTarget::Field {
                        object: obj.clone(),
                        field: name.clone(),
                    },
                    Expr::This(_) => AssignTarget::Field {
                        object: "this".to_string(),
                        field: name.clone(),
                    },
                    _ => return Err(self.error(vec!["an assignable target"])),
                },
                _ => return Err(self.error(vec!["an assignable target"])),
            };
            self.advance();
            let value = self.parse_expr()?;
            let semi = self.expect(&TokenKind::Semi, "`;`")?;
            return Ok(Stmt::Assign {
                target,
                value,
                span: Span {
                    start,
                    end: semi.end,
                },
            });
        }
        let semi = self.expect(&TokenKind::Semi, "`;`")?;
        Ok(Stmt::Expr {
            expr,
            span: Span {
                start,
                end: semi.end,
            },
        })
    }

    fn parse_if(&mut self) -> Result<Stmt, ParseError> {
        let start = self.peek().start;
        self.expect_ident("`if`")?;
        self.expect(&TokenKind::LParen, "`(`")?;
        let cond = self.parse_expr()?;
        self.expect(&TokenKind::RParen, "`)`")?;
        let then_block = self.parse_block()?;
        let mut end = self.tokens[self.pos - 1].end;
        let else_block = if self.eat_ident("else") {
            let block = if self.ident_is("if") {
                let nested = self.parse_if()?;
                Block {
                    stmts: vec![nested],
                }
            } else {
                self.parse_block()?
            };
            end = self.tokens[self.pos - 1].end;
            Some(block)
        } else {
            None
        };
        Ok(Stmt::If {
            cond,
            then_block,
            else_block,
            span: Span { start, end },
        })
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        self.parse_or()
    }

    fn parse_or(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_and()?;
        while matches!(self.peek().kind, TokenKind::OrOr) {
            self.advance();
            let rhs = self.parse_and()?;
            let span = Span {
                start: lhs.span().start,
                end: rhs.span().end,
            };
            lhs = Expr::Binary {
                op: BinOp::Or,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_equality()?;
        while matches!(self.peek().kind, TokenKind::AndAnd) {
            self.advance();
            let rhs = self.parse_equality()?;
            let span = Span {
                start: lhs.span().start,
                end: rhs.span().end,
            };
            lhs = Expr::Binary {
                op: BinOp::And,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn parse_equality(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_additive()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::EqEq => BinOp::Eq,
                TokenKind::NotEq => BinOp::Ne,
                _ => break,
            };
            self.advance();
            let rhs = self.parse_additive()?;
            let span = Span {
                start: lhs.span().start,
                end: rhs.span().end,
            };
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn parse_additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_unary()?;
        while matches!(self.peek().kind, TokenKind::Plus) {
            self.advance();
            let rhs = self.parse_unary()?;
            let span = Span {
                start: lhs.span().start,
                end: rhs.span().end,
            };
            lhs = Expr::Binary {
                op: BinOp::Add,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek().kind, TokenKind::Bang) {
            let bang = self.advance();
            let expr = self.parse_unary()?;
            let span = Span {
                start: bang.start,
                end: expr.span().end,
            };
            return Ok(Expr::Not {
                expr: Box::new(expr),
                span,
            });
        }
        self.parse_postfix()
    }

    fn parse_postfix(&mut self) -> Result<Expr, ParseError> {
        let mut expr = self.parse_primary()?;
        while matches!(self.peek().kind, TokenKind::Dot) {
            self.advance();
            let (name, name_token) = self.expect_ident("member or method name")?;
            if matches!(self.peek().kind, TokenKind::LParen) {
                let (args, end) = self.parse_args()?;
                let span = Span {
                    start: expr.span().start,
                    end,
                };
                expr = Expr::Call {
                    receiver: Some(Box::new(expr)),
                    name,
                    args,
                    span,
                };
            } else {
                let span = Span {
                    start: expr.span().start,
                    end: name_token.end,
                };
                expr = Expr::Field {
                    object: Box::new(expr),
                    name,
                    span,
                };
            }
        }
        Ok(expr)
    }

    fn parse_args(&mut self) -> Result<(Vec<Expr>, usize), ParseError> {
        self.expect(&TokenKind::LParen, "`(`")?;
        let mut args = Vec::new();
        if !matches!(self.peek().kind, TokenKind::RParen) {
            loop {
                args.push(self.parse_expr()?);
                if matches!(self.peek().kind, TokenKind::Comma) {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        let close = self.expect(&TokenKind::RParen, "`)`")?;
        Ok((args, close.end))
    }

    fn parse_primary(&mut self) -> Result<Expr, ParseError> {
        let token = self.peek().clone();
        match token.kind {
            TokenKind::StringLit(value) => {
                self.advance();
                Ok(Expr::StringLit(
                    value,
                    Span {
                        start: token.start,
                        end: token.end,
                    },
                ))
            }
            TokenKind::IntLit(value) => {
                self.advance();
                Ok(Expr::IntLit(
                    value,
                    Span {
                        start: token.start,
                        end: token.end,
                    },
                ))
            }
            TokenKind::LParen => {
                self.advance();
                let expr = self.parse_expr()?;
                self.expect(&TokenKind::RParen, "`)`")?;
                Ok(expr)
            }
            TokenKind::Ident(name) => match name.as_str() {
                "true" | "false" => {
                    self.advance();
                    Ok(Expr::BoolLit(
                        name == "true",
                        Span {
                            start: token.start,
                            end: token.end,
                        },
                    ))
                }
                "this" => {
                    self.advance();
                    Ok(Expr::This(Span {
                        start: token.start,
                        end: token.end,
                    }))
                }
                "new" => {
                    self.advance();
                    let (class, _) = self.expect_ident("class name")?;
                    let (args, end) = self.parse_args()?;
                    Ok(Expr::New {
                        class,
                        args,
                        span: Span {
                            start: token.start,
                            end,
                        },
                    })
                }
                _ => {
                    self.advance();
                    if matches!(self.peek().kind, TokenKind::LParen) {
                        let (args, end) = self.parse_args()?;
                        Ok(Expr::Call {
                            receiver: None,
                            name,
                            args,
                            span: Span {
                                start: token.start,
                                end,
                            },
                        })
                    } else {
                        Ok(Expr::Var(
                            name,
                            Span {
                                start: token.start,
                                end: token.end,
                            },
                        ))
                    }
                }
            },
            _ => Err(self.error(vec![
                "an expression",
            ])),
        }
    }
}
