//! Threshold decisions with debounce, tool-wear checks and NC-style
//! command text.
//!
//! NC grammar, one command per line:
//!
//! ```text
//! F<value>   set feed rate (mm/min, >= 0)
//! S<value>   set spindle speed (rpm, > 0)
//! M00        halt
//! M01        resume
//! M06        tool change
//! ```
//!
//! Values render with Rust's shortest round-trip float formatting and always
//! carry a decimal point or exponent, so `decode(encode(c)) == c` bit for bit.

use alloc::format;
use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CommandKind {
    SetFeedRate(f64),
    SetSpindleSpeed(f64),
    Halt,
    Resume,
    ToolChange,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SetFeedRate(_) => "SetFeedRate",
            Self::SetSpindleSpeed(_) => "SetSpindleSpeed",
            Self::Halt => "Halt",
            Self::Resume => "Resume",
            Self::ToolChange => "ToolChange",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NcError {
    #[error("empty NC line")]
    Empty,
    #[error("unknown NC word `{0}`")]
    UnknownWord(String),
    #[error("bad numeric value in `{0}`")]
    BadNumber(String),
    #[error("value out of range in `{0}`")]
    OutOfRange(String),
}

/// A machine command with the monotonic time it was issued.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MachineCommand {
    pub kind: CommandKind,
    pub issue_timestamp_ns: u64,
}

impl MachineCommand {
    pub fn new(kind: CommandKind) -> Self {
        Self {
            kind,
            issue_timestamp_ns: 0,
        }
    }

    pub fn at(kind: CommandKind, issue_timestamp_ns: u64) -> Self {
        Self { kind, issue_timestamp_ns }
    }

    pub fn nc_text(&self) -> String {
        encode_nc(&self.kind)
    }
}

pub fn encode_nc(kind: &CommandKind) -> String {
    match *kind {
        CommandKind::SetFeedRate(v) => format!("F{v:?}"),
        CommandKind::SetSpindleSpeed(v) => format!("S{v:?}"),
        CommandKind::Halt => String::from("M00"),
        CommandKind::Resume => String::from("M01"),
        CommandKind::ToolChange => String::from("M06"),
    }
}

pub fn decode_nc(line: &str) -> Result<CommandKind, NcError> {
    let token = line.trim();
    if token.is_empty() {
        return Err(NcError::Empty);
    }
    let owned = || String::from(token);
    match token {
        "M00" => return Ok(CommandKind::Halt),
        "M01" => return Ok(CommandKind::Resume),
        "M06" => return Ok(CommandKind::ToolChange),
        _ => {}
    }
    let (letter, rest) = token.split_at(token.chars().next().map_or(0, char::len_utf8));
    if letter != "F" && letter != "S" {
        return Err(NcError::UnknownWord(owned()));
    }
    if rest.is_empty() || rest.starts_with('+') || rest.contains(|c: char| c.is_ascii_alphabetic() && c != 'e') {
        return Err(NcError::BadNumber(owned()));
    }
    let value: f64 = rest.parse().map_err(|_| NcError::BadNumber(owned()))?;
    if !value.is_finite() {
        return Err(NcError::BadNumber(owned()));
    }
    match letter {
        "F" if value >= 0.0 && !value.is_sign_negative() => Ok(CommandKind::SetFeedRate(value)),
        "S" if value > 0.0 => Ok(CommandKind::SetSpindleSpeed(value)),
        _ => Err(NcError::OutOfRange(owned())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PolicyError {
    #[error("contact threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("debounce must be at least one window")]
    Debounce,
    #[error("wear replacement fraction must lie in [0, 1], got {0}")]
    WearFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecisionPolicy {
    pub contact_probability_threshold: f64,
    pub debounce_windows: u32,
    pub wear_replacement_fraction: f64,
    /// Issued when the controller flips to contact.
    pub contact_action: CommandKind,
    /// Issued when the controller flips back to no contact.
    pub restore_action: CommandKind,
    pub anomaly_action: CommandKind,
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        Self {
            contact_probability_threshold: 0.5,
            debounce_windows: 1,
            wear_replacement_fraction: 0.80,
            contact_action: CommandKind::SetFeedRate(80.0),
            restore_action: CommandKind::SetFeedRate(100.0),
            anomaly_action: CommandKind::Halt,
        }
    }
}

impl DecisionPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let t = self.contact_probability_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(PolicyError::Threshold(t));
        }
        if self.debounce_windows == 0 {
            return Err(PolicyError::Debounce);
        }
        let w = self.wear_replacement_fraction;
        if !(0.0..=1.0).contains(&w) {
            return Err(PolicyError::WearFraction(w));
        }
        Ok(())
    }

    pub fn classify(&self, p_contact: f64) -> bool {
        p_contact >= self.contact_probability_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControllerState {
    pub believed_contact: bool,
    /// Consecutive classifications disagreeing with `believed_contact`.
    pub consecutive_agreements: u32,
    pub last_command: Option<MachineCommand>,
    pub tool_change_issued: bool,
}

/// Advance the debounce automaton by one prediction.
pub fn decide(
    state: &ControllerState,
    p_contact: f64,
    policy: &DecisionPolicy,
    now_ns: u64,
) -> (ControllerState, Option<MachineCommand>) {
    let mut next = *state;
    let contact = policy.classify(p_contact);
    if contact == state.believed_contact {
        next.consecutive_agreements = 0;
        return (next, None);
    }
    next.consecutive_agreements += 1;
    if next.consecutive_agreements < policy.debounce_windows {
        return (next, None);
    }
    next.believed_contact = contact;
    next.consecutive_agreements = 0;
    let kind = if contact { policy.contact_action } else { policy.restore_action };
    let cmd = MachineCommand::at(kind, now_ns);
    next.last_command = Some(cmd);
    (next, Some(cmd))
}

/// ToolChange once per tool life when wear strictly exceeds the policy's
/// replacement fraction.
pub fn wear_check(
    state: &ControllerState,
    cumulative_wear_fraction: f64,
    policy: &DecisionPolicy,
    now_ns: u64,
) -> (ControllerState, Option<MachineCommand>) {
    let mut next = *state;
    if state.tool_change_issued || cumulative_wear_fraction <= policy.wear_replacement_fraction {
        return (next, None);
    }
    let cmd = MachineCommand::at(CommandKind::ToolChange, now_ns);
    next.tool_change_issued = true;
    next.last_command = Some(cmd);
    (next, Some(cmd))
}

/// Re-arm the wear check after the tool has been replaced.
pub fn new_tool(state: &ControllerState) -> ControllerState {
    ControllerState {
        tool_change_issued: false,
        ..*state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn run(ps: &[f64], debounce: u32) -> (ControllerState, Vec<MachineCommand>) {
        let policy = DecisionPolicy {
            debounce_windows: debounce,
            ..DecisionPolicy::default()
        };
        let mut st = ControllerState::default();
        let mut cmds = Vec::new();
        for &p in ps {
            let (s, c) = decide(&st, p, &policy, 0);
            st = s;
            cmds.extend(c);
        }
        (st, cmds)
    }

    #[test]
    fn single_window_flip() {
        let (st, cmds) = run(&[0.9], 1);
        assert!(st.believed_contact);
        assert_eq!(cmds.len(), 1);
        assert_eq!(cmds[0].kind, CommandKind::SetFeedRate(80.0));
    }

    #[test]
    fn broken_streak_does_not_flip() {
        let (st, cmds) = run(&[0.9, 0.9, 0.4, 0.9], 3);
        assert!(!st.believed_contact);
        assert!(cmds.is_empty());
        assert_eq!(st.consecutive_agreements, 1);
    }

    #[test]
    fn threshold_tie_is_contact() {
        let (st, _) = run(&[0.5], 1);
        assert!(st.believed_contact);
    }

    #[test]
    fn repeated_agreement_is_idempotent() {
        let (_, cmds) = run(&[0.9, 0.9, 0.9, 0.1, 0.1], 1);
        assert_eq!(cmds.len(), 2);
        assert_eq!(cmds[1].kind, CommandKind::SetFeedRate(100.0));
    }

    #[test]
    fn wear_boundaries() {
        let policy = DecisionPolicy::default();
        let st = ControllerState::default();
        let (st1, c) = wear_check(&st, 0.81, &policy, 5);
        assert_eq!(c.map(|c| c.kind), Some(CommandKind::ToolChange));
        assert!(wear_check(&st1, 0.95, &policy, 6).1.is_none(), "once per tool life");
        assert!(wear_check(&new_tool(&st1), 0.95, &policy, 7).1.is_some());
        assert!(wear_check(&st, 0.80, &policy, 0).1.is_none());
        assert!(wear_check(&st, 0.0, &policy, 0).1.is_none());
    }

    #[test]
    fn nc_fixed_forms() {
        assert_eq!(encode_nc(&CommandKind::SetFeedRate(50.0)), "F50.0");
        assert_eq!(decode_nc("F50.0"), Ok(CommandKind::SetFeedRate(50.0)));
        assert_eq!(encode_nc(&CommandKind::Halt), "M00");
        assert_eq!(encode_nc(&CommandKind::Resume), "M01");
        assert_eq!(encode_nc(&CommandKind::ToolChange), "M06");
        assert_eq!(decode_nc("S12000.0"), Ok(CommandKind::SetSpindleSpeed(12_000.0)));
    }

    #[test]
    fn nc_errors_name_token() {
        let err = decode_nc("F-5").unwrap_err();
        assert_eq!(err, NcError::OutOfRange("F-5".into()));
        assert!(alloc::format!("{err}").contains("F-5"));
        assert_eq!(decode_nc("G01"), Err(NcError::UnknownWord("G01".into())));
        assert_eq!(decode_nc("Fabc"), Err(NcError::BadNumber("Fabc".into())));
        assert_eq!(decode_nc("Finf"), Err(NcError::BadNumber("Finf".into())));
        assert_eq!(decode_nc("S0.0"), Err(NcError::OutOfRange("S0.0".into())));
        assert_eq!(decode_nc(""), Err(NcError::Empty));
    }

    #[test]
    fn invalid_policies_rejected() {
        let mut p = DecisionPolicy::default();
        p.contact_probability_threshold = 1.0;
        assert!(p.validate().is_err());
        p = DecisionPolicy::default();
        p.debounce_windows = 0;
        assert!(p.validate().is_err());
    }
}
