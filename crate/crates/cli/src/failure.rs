use std::fmt;

/// A failed command, split by the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type Outcome = Result<(), Failure>;

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Failure::Config(anyhow::anyhow!("{msg}"))
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Failure::Runtime(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (Failure::Config(e) | Failure::Runtime(e)) = self;
        // drop causes whose text the previous message already quotes
        let mut prev = String::new();
        for (i, cause) in e.chain().enumerate() {
            let text = cause.to_string();
            if i > 0 && prev.contains(&text) {
                continue;
            }
            if i > 0 {
                f.write_str(": ")?;
            }
            f.write_str(&text)?;
            prev = text;
        }
        Ok(())
    }
}

pub trait Classify<T> {
    fn config(self, what: &str) -> Result<T, Failure>;
    fn runtime(self, what: &str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into().context(what.to_string())))
    }

    fn runtime(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into().context(what.to_string())))
    }
}
