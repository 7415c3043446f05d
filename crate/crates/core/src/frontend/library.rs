//! Built-in models of library methods the analyzed code may call.

/// How a library call moves data from inputs to its return value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagation {
    /// The return value is independent of receiver and arguments.
    None,
    /// The return value carries the receiver's data.
    Receiver,
    /// The return value carries data from every argument.
    Args,
    /// The return value carries receiver and all arguments.
    ReceiverAndArgs,
    /// The return value carries the receiver plus one specific argument.
    ReceiverAndArg(usize),
}

/// One modeled library method.
#[derive(Debug, Clone, Copy)]
pub struct LibraryMethod {
    /// Declaring class when the model is class-specific; `None` matches any receiver.
    pub class: Option<&'static str>,
    pub name: &'static str,
    pub ret: &'static str,
    pub params: &'static [&'static str],
    pub propagation: Propagation,
}

impl LibraryMethod {
    /// External definition string, shaped like a plain Java signature.
    pub fn def_string(&self) -> String {
        let owner = self.class.unwrap_or("Library");
        format!("{} {}.{}({})", self.ret, owner, self.name, self.params.join(", "))
    }
}

/// Methods with well-known semantics. Lookups prefer a class-specific entry.
pub const LIBRARY_METHODS: &[LibraryMethod] = &[
    LibraryMethod { class: Some("String"), name: "contains", ret: "boolean", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("String"), name: "equals", ret: "boolean", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("String"), name: "equalsIgnoreCase", ret: "boolean", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("String"), name: "startsWith", ret: "boolean", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("String"), name: "endsWith", ret: "boolean", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("String"), name: "matches", ret: "boolean", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("String"), name: "isEmpty", ret: "boolean", params: &[], propagation: Propagation::None },
    LibraryMethod { class: Some("String"), name: "length", ret: "int", params: &[], propagation: Propagation::None },
    LibraryMethod { class: Some("String"), name: "indexOf", ret: "int", params: &["String"], propagation: Propagation::None },
    // replace: characters of the match target are removed, so only the
    // replacement argument joins the receiver in the result.
    LibraryMethod { class: Some("String"), name: "replace", ret: "String", params: &["String", "String"], propagation: Propagation::ReceiverAndArg(1) },
    LibraryMethod { class: Some("String"), name: "replaceAll", ret: "String", params: &["String", "String"], propagation: Propagation::ReceiverAndArg(1) },
    LibraryMethod { class: Some("String"), name: "trim", ret: "String", params: &[], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("String"), name: "toLowerCase", ret: "String", params: &[], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("String"), name: "toUpperCase", ret: "String", params: &[], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("String"), name: "substring", ret: "String", params: &["int"], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("String"), name: "concat", ret: "String", params: &["String"], propagation: Propagation::ReceiverAndArgs },
    LibraryMethod { class: Some("String"), name: "valueOf", ret: "String", params: &["Object"], propagation: Propagation::Args },
    LibraryMethod { class: None, name: "toString", ret: "String", params: &[], propagation: Propagation::Receiver },
    LibraryMethod { class: None, name: "getMessage", ret: "String", params: &[], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("StringBuilder"), name: "append", ret: "StringBuilder", params: &["String"], propagation: Propagation::ReceiverAndArgs },
    LibraryMethod { class: Some("HttpServletRequest"), name: "getParameter", ret: "String", params: &["String"], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("HttpServletRequest"), name: "getHeader", ret: "String", params: &["String"], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("HttpServletRequest"), name: "getQueryString", ret: "String", params: &[], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("BufferedReader"), name: "readLine", ret: "String", params: &[], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("HttpServletResponse"), name: "getWriter", ret: "PrintWriter", params: &[], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("HttpServletResponse"), name: "setContentType", ret: "void", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("PrintWriter"), name: "write", ret: "void", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("PrintWriter"), name: "println", ret: "void", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("PrintWriter"), name: "print", ret: "void", params: &["String"], propagation: Propagation::None },
    LibraryMethod { class: Some("Runtime"), name: "getRuntime", ret: "Runtime", params: &[], propagation: Propagation::None },
    LibraryMethod { class: Some("Runtime"), name: "exec", ret: "Process", params: &["String"], propagation: Propagation::Args },
    LibraryMethod { class: Some("ProcessBuilder"), name: "command", ret: "ProcessBuilder", params: &["String"], propagation: Propagation::Args },
    LibraryMethod { class: Some("ProcessBuilder"), name: "start", ret: "Process", params: &[], propagation: Propagation::Receiver },
    LibraryMethod { class: Some("Paths"), name: "get", ret: "Path", params: &["String"], propagation: Propagation::Args },
    LibraryMethod { class: Some("Files"), name: "readString", ret: "String", params: &["Path"], propagation: Propagation::Args },
    LibraryMethod { class: Some("Files"), name: "readAllBytes", ret: "byte", params: &["Path"], propagation: Propagation::Args },
    LibraryMethod { class: Some("Files"), name: "newInputStream", ret: "InputStream", params: &["Path"], propagation: Propagation::Args },
    LibraryMethod { class: Some("Files"), name: "delete", ret: "void", params: &["Path"], propagation: Propagation::Args },
    LibraryMethod { class: Some("Connection"), name: "createStatement", ret: "Statement", params: &[], propagation: Propagation::None },
    LibraryMethod { class: Some("Connection"), name: "prepareStatement", ret: "PreparedStatement", params: &["String"], propagation: Propagation::Args },
    LibraryMethod { class: Some("Statement"), name: "executeQuery", ret: "ResultSet", params: &["String"], propagation: Propagation::Args },
    LibraryMethod { class: Some("Statement"), name: "executeUpdate", ret: "int", params: &["String"], propagation: Propagation::Args },
    LibraryMethod { class: Some("Statement"), name: "execute", ret: "boolean", params: &["String"], propagation: Propagation::Args },
    LibraryMethod { class: Some("Statement"), name: "addBatch", ret: "void", params: &["String"], propagation: Propagation::Args },
    LibraryMethod { class: Some("PreparedStatement"), name: "setString", ret: "void", params: &["int", "String"], propagation: Propagation::None },
    LibraryMethod { class: Some("PreparedStatement"), name: "setInt", ret: "void", params: &["int", "int"], propagation: Propagation::None },
    LibraryMethod { class: Some("PreparedStatement"), name: "executeQuery", ret: "ResultSet", params: &[], propagation: Propagation::None },
];

/// Looks up a model, preferring an exact class match over a class-agnostic one.
pub fn lookup(class: Option<&str>, name: &str) -> Option<&'static LibraryMethod> {
    if let Some(class) = class {
        if let Some(exact) = LIBRARY_METHODS
            .iter()
            .find(|m| m.class == Some(class) && m.name == name)
        {
            return Some(exact);
        }
    }
    LIBRARY_METHODS
        .iter()
        .find(|m| m.class.is_none() && m.name == name)
        .or_else(|| {
            // A lone class-specific entry still answers a bare-name query.
            let mut matches = LIBRARY_METHODS.iter().filter(|m| m.name == name);
            let first = matches.next()?;
            if matches.next().is_none() {
                Some(first)
            } else {
                None
            }
        })
}

/// Qualified names whose bodies carry no analysis value beyond the model above.
pub fn known_semantics_ids() -> Vec<String> {
    LIBRARY_METHODS
        .iter()
        .map(|m| match m.class {
            Some(class) => format!("{}.{}", class, m.name),
            None => m.name.to_string(),
        })
        .collect()
}
