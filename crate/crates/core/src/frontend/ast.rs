//! Syntax model for the Java-like mini-language.

/// Byte range into the original source text. Statements and expressions keep
/// spans so call snippets and method bodies can be quoted verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn slice<'a>(&self, source: &'a str) -> &'a str {
        &source[self.start..self.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniProgram {
    pub source: String,
    pub classes: Vec<ClassDecl>,
}

impl MiniProgram {
    pub fn find_class(&self, name: &str) -> Option<&ClassDecl> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn find_method(&self, class: &str, name: &str) -> Option<(&ClassDecl, &MethodDecl)> {
        let class = self.find_class(class)?;
        class
            .methods
            .iter()
            .find(|m| m.lookup_name() == name)
            .map(|m| (class, m))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDecl {
    pub name: String,
    pub fields: Vec<FieldDecl>,
    pub methods: Vec<MethodDecl>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub ty: String,
    pub init: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodDecl {
    pub name: String,
    pub params: Vec<ParamDecl>,
    /// Declared return type; the class name for constructors.
    pub return_type: String,
    pub is_static: bool,
    pub is_constructor: bool,
    pub body: Block,
    /// Whole declaration including signature and body.
    pub span: Span,
    /// Signature only, up to the parameter list (and throws clause).
    pub sig_span: Span,
}

impl MethodDecl {
    /// Name used for call resolution; constructors resolve under "new".
    pub fn lookup_name(&self) -> &str {
        if self.is_constructor {
            "new"
        } else {
            &self.name
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssignTarget {
    Var(String),
    /// `this.f` or `obj.f`; object is the receiver variable name.
    Field { object: String, field: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Local {
        ty: String,
        name: String,
        init: Option<Expr>,
        span: Span,
    },
    Assign {
        target: AssignTarget,
        value: Expr,
        span: Span,
    },
    Expr {
        expr: Expr,
        span: Span,
    },
    If {
        cond: Expr,
        then_block: Block,
        else_block: Option<Block>,
        span: Span,
    },
    Return {
        value: Option<Expr>,
        span: Span,
    },
    Throw {
        value: Expr,
        span: Span,
    },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::Local { span, .. }
            | Stmt::Assign { span, .. }
            | Stmt::Expr { span, .. }
            | Stmt::If { span, .. }
            | Stmt::Return { span, .. }
            | Stmt::Throw { span, .. } => *span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    And,
    Or,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    StringLit(String, Span),
    IntLit(i64, Span),
    BoolLit(bool, Span),
    Var(String, Span),
    This(Span),
    Field {
        object: Box<Expr>,
        name: String,
        span: Span,
    },
    Call {
        receiver: Option<Box<Expr>>,
        name: String,
        args: Vec<Expr>,
        span: Span,
    },
    New {
        class: String,
        args: Vec<Expr>,
        span: Span,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
    Not {
        expr: Box<Expr>,
        span: Span,
    },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::StringLit(_, span)
            | Expr::IntLit(_, span)
            | Expr::BoolLit(_, span)
            | Expr::Var(_, span)
            | Expr::This(span)
            | Expr::Field { span, .. }
            | Expr::Call { span, .. }
            | Expr::New { span, .. }
            | Expr::Binary { span, .. }
            | Expr::Not { span, .. } => *span,
        }
    }
}
