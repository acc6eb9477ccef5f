//! Tagged negotiation messages and a bounded multi-round bargaining session.
//!
//! Wire forms (the whole message is wrapped in `<s>` / `</s>`):
//!
//! ```text
//! <s>I propose to {action}</s>
//! <s>I propose transferring {amount} because {reasoning}</s>
//! <s>I agree because {reasoning}</s>
//! <s>I disagree because {reasoning}</s>
//! <s>I counter-propose transferring {amount} because {reasoning}</s>
//! ```
//!
//! A counter-proposal always carries a full transfer proposal; the bare
//! `I counter-propose because ...` form is rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalition::AgentId;

const OPEN: &str = "<s>";
const CLOSE: &str = "</s>";
const INTENT: &str = "I propose to ";
const TRANSFER: &str = "I propose transferring ";
const AGREE: &str = "I agree because ";
const DISAGREE: &str = "I disagree because ";
const COUNTER: &str = "I counter-propose transferring ";
const COUNTER_BARE: &str = "I counter-propose because ";
const BECAUSE: &str = " because ";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("frame error: {0}")]
    Frame(String),
    #[error("grammar error at {span:?} ({fragment:?}): {reason}")]
    Grammar { reason: String, span: Range<usize>, fragment: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stance {
    Agree,
    Disagree,
    CounterPropose,
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stance::Agree => "agree",
            Stance::Disagree => "disagree",
            Stance::CounterPropose => "counter-propose",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferProposal {
    pub amount: f64,
    pub reasoning: String,
}

impl TransferProposal {
    pub fn new(amount: f64, reasoning: impl Into<String>) -> Self {
        Self { amount, reasoning: reasoning.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NegotiationMessage {
    Intent { action: String },
    TransferProposal(TransferProposal),
    Agree { reasoning: String },
    Disagree { reasoning: String },
    CounterPropose(TransferProposal),
}

impl NegotiationMessage {
    pub fn intent(action: impl Into<String>) -> Self {
        Self::Intent { action: action.into() }
    }

    pub fn proposal(amount: f64, reasoning: impl Into<String>) -> Self {
        Self::TransferProposal(TransferProposal::new(amount, reasoning))
    }

    pub fn agree(reasoning: impl Into<String>) -> Self {
        Self::Agree { reasoning: reasoning.into() }
    }

    pub fn disagree(reasoning: impl Into<String>) -> Self {
        Self::Disagree { reasoning: reasoning.into() }
    }

    pub fn counter(amount: f64, reasoning: impl Into<String>) -> Self {
        Self::CounterPropose(TransferProposal::new(amount, reasoning))
    }

    /// Stance for response messages, `None` for intents and proposals.
    pub fn stance(&self) -> Option<Stance> {
        match self {
            Self::Agree { .. } => Some(Stance::Agree),
            Self::Disagree { .. } => Some(Stance::Disagree),
            Self::CounterPropose(_) => Some(Stance::CounterPropose),
            _ => None,
        }
    }

    /// The proposal this message puts on the table, if any.
    pub fn proposal_payload(&self) -> Option<&TransferProposal> {
        match self {
            Self::TransferProposal(p) | Self::CounterPropose(p) => Some(p),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        render_message(self)
    }
}

impl fmt::Display for NegotiationMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_message(self))
    }
}

pub fn render_message(message: &NegotiationMessage) -> String {
    let body = match message {
        NegotiationMessage::Intent { action } => format!("{INTENT}{action}"),
        NegotiationMessage::TransferProposal(p) => {
            format!("{TRANSFER}{}{BECAUSE}{}", p.amount, p.reasoning)
        }
        NegotiationMessage::Agree { reasoning } => format!("{AGREE}{reasoning}"),
        NegotiationMessage::Disagree { reasoning } => format!("{DISAGREE}{reasoning}"),
        NegotiationMessage::CounterPropose(p) => {
            format!("{COUNTER}{}{BECAUSE}{}", p.amount, p.reasoning)
        }
    };
    format!("{OPEN}{body}{CLOSE}")
}

/// Parses one tagged message. Whitespace around the frame is ignored; free
/// text inside it is kept byte for byte.
pub fn parse_message(text: &str) -> Result<NegotiationMessage, ProtocolError> {
    let lead = text.len() - text.trim_start().len();
    let framed = text.trim();
    let inner = framed
        .strip_prefix(OPEN)
        .ok_or_else(|| ProtocolError::Frame("message must start with <s>".into()))?
        .strip_suffix(CLOSE)
        .ok_or_else(|| ProtocolError::Frame("message must end with </s>".into()))?;
    if inner.contains(OPEN) || inner.contains(CLOSE) {
        return Err(ProtocolError::Frame("nested or mismatched <s>/</s> tags".into()));
    }
    let base = lead + OPEN.len();
    let grammar = |reason: &str, start: usize, end: usize| ProtocolError::Grammar {
        reason: reason.to_string(),
        span: base + start..base + end,
        fragment: inner[start..end].to_string(),
    };

    if let Some(action) = inner.strip_prefix(INTENT) {
        return Ok(NegotiationMessage::intent(action));
    }
    if let Some(rest) = inner.strip_prefix(TRANSFER) {
        let p = parse_proposal(rest, TRANSFER.len(), &grammar)?;
        return Ok(NegotiationMessage::TransferProposal(p));
    }
    if let Some(rest) = inner.strip_prefix(COUNTER) {
        let p = parse_proposal(rest, COUNTER.len(), &grammar)?;
        return Ok(NegotiationMessage::CounterPropose(p));
    }
    if let Some(reasoning) = inner.strip_prefix(AGREE) {
        return Ok(NegotiationMessage::agree(reasoning));
    }
    if let Some(reasoning) = inner.strip_prefix(DISAGREE) {
        return Ok(NegotiationMessage::disagree(reasoning));
    }
    if inner.starts_with(COUNTER_BARE) {
        return Err(grammar("counter-proposal must name a transfer amount", 0, inner.len()));
    }
    Err(grammar("unrecognized message template", 0, inner.len()))
}

fn parse_proposal<F>(rest: &str, offset: usize, grammar: &F) -> Result<TransferProposal, ProtocolError>
where
    F: Fn(&str, usize, usize) -> ProtocolError,
{
    let Some((amount, reasoning)) = rest.split_once(BECAUSE) else {
        return Err(grammar("transfer proposal is missing ' because '", offset, offset + rest.len()));
    };
    let span = (offset, offset + amount.len());
    match amount.parse::<f64>() {
        Ok(v) if v.is_finite() && !amount.is_empty() => Ok(TransferProposal::new(v, reasoning)),
        _ => Err(grammar("transfer amount is not a finite number", span.0, span.1)),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("session is closed")]
    Closed,
    #[error("agent {0} is not a participant")]
    UnknownSender(AgentId),
    #[error("out of turn: expected agent {expected}, got {got}")]
    OutOfTurn { expected: AgentId, got: AgentId },
    #[error("a session needs at least one participant and one round")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreedProposal {
    pub proposer: AgentId,
    pub proposal: TransferProposal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Agreed(AgreedProposal),
    TimedOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub round: usize,
    pub sender: AgentId,
    pub message: NegotiationMessage,
}

/// One line of a transcript export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub round: usize,
    pub sender: AgentId,
    pub raw: String,
    pub parsed: NegotiationMessage,
}

impl From<&TranscriptEntry> for TranscriptLine {
    fn from(e: &TranscriptEntry) -> Self {
        Self { round: e.round, sender: e.sender, raw: render_message(&e.message), parsed: e.message.clone() }
    }
}

/// Round-robin bargaining over a single standing proposal.
///
/// Participants speak in list order, one turn each per round. A proposal or
/// counter-proposal replaces the standing proposal and clears all agrees; the
/// session is agreed once every participant other than the proposer has
/// answered `agree` to the standing proposal.
#[derive(Debug, Clone)]
pub struct Session {
    participants: Vec<AgentId>,
    max_rounds: usize,
    turns: usize,
    transcript: Vec<TranscriptEntry>,
    status: SessionStatus,
    standing: Option<AgreedProposal>,
    agreed_by: BTreeSet<AgentId>,
}

impl Session {
    pub fn new(participants: Vec<AgentId>, max_rounds: usize) -> Result<Self, SessionError> {
        if participants.is_empty() || max_rounds == 0 {
            return Err(SessionError::Empty);
        }
        Ok(Self {
            participants,
            max_rounds,
            turns: 0,
            transcript: Vec::new(),
            status: SessionStatus::Open,
            standing: None,
            agreed_by: BTreeSet::new(),
        })
    }

    pub fn participants(&self) -> &[AgentId] {
        &self.participants
    }

    pub fn max_rounds(&self) -> usize {
        self.max_rounds
    }

    /// 1-based round of the next turn (or of the last turn once closed).
    pub fn round(&self) -> usize {
        let k = self.participants.len();
        (self.turns.min(self.max_rounds * k - 1)) / k + 1
    }

    pub fn status(&self) -> &SessionStatus {
        &self.status
    }

    pub fn is_open(&self) -> bool {
        self.status == SessionStatus::Open
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn standing_proposal(&self) -> Option<&AgreedProposal> {
        self.standing.as_ref()
    }

    /// Whose turn it is, `None` once closed.
    pub fn next_speaker(&self) -> Option<AgentId> {
        self.is_open().then(|| self.participants[self.turns % self.participants.len()])
    }

    fn take_turn(&mut self, sender: AgentId) -> Result<usize, SessionError> {
        if !self.is_open() {
            return Err(SessionError::Closed);
        }
        if !self.participants.contains(&sender) {
            return Err(SessionError::UnknownSender(sender));
        }
        let expected = self.participants[self.turns % self.participants.len()];
        if expected != sender {
            return Err(SessionError::OutOfTurn { expected, got: sender });
        }
        Ok(self.round())
    }

    fn finish_turn(&mut self) {
        self.turns += 1;
        if self.is_open() && self.turns >= self.max_rounds * self.participants.len() {
            self.status = SessionStatus::TimedOut;
        }
    }

    pub fn advance(&mut self, sender: AgentId, message: NegotiationMessage) -> Result<&SessionStatus, SessionError> {
        let round = self.take_turn(sender)?;
        match &message {
            NegotiationMessage::TransferProposal(p) | NegotiationMessage::CounterPropose(p) => {
                self.standing = Some(AgreedProposal { proposer: sender, proposal: p.clone() });
                self.agreed_by.clear();
            }
            NegotiationMessage::Agree { .. } => {
                if matches!(&self.standing, Some(s) if s.proposer != sender) {
                    self.agreed_by.insert(sender);
                }
            }
            NegotiationMessage::Disagree { .. } => {
                self.agreed_by.remove(&sender);
            }
            NegotiationMessage::Intent { .. } => {}
        }
        self.transcript.push(TranscriptEntry { round, sender, message });
        if let Some(standing) = &self.standing {
            let unanimous = self
                .participants
                .iter()
                .filter(|&&p| p != standing.proposer)
                .all(|p| self.agreed_by.contains(p));
            if unanimous {
                self.status = SessionStatus::Agreed(standing.clone());
            }
        }
        self.finish_turn();
        Ok(&self.status)
    }

    /// Consumes `sender`'s turn without a message (e.g. an unparsable reply).
    pub fn skip(&mut self, sender: AgentId) -> Result<&SessionStatus, SessionError> {
        self.take_turn(sender)?;
        self.finish_turn();
        Ok(&self.status)
    }

    pub fn transcript_lines(&self) -> Vec<TranscriptLine> {
        self.transcript.iter().map(TranscriptLine::from).collect()
    }

    /// JSONL, one message per line.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for line in self.transcript_lines() {
            out.push_str(&serde_json::to_string(&line).expect("transcript line serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_three_templates() {
        assert_eq!(
            parse_message("<s>I propose to pull the lever</s>").unwrap(),
            NegotiationMessage::intent("pull the lever")
        );
        assert_eq!(
            parse_message("<s>I propose transferring 5.5 because you paid the lever cost</s>").unwrap(),
            NegotiationMessage::proposal(5.5, "you paid the lever cost")
        );
        assert_eq!(
            parse_message("<s>I agree because the split matches contributions</s>").unwrap(),
            NegotiationMessage::agree("the split matches contributions")
        );
        assert_eq!(
            parse_message("<s>I disagree because too low</s>").unwrap().stance(),
            Some(Stance::Disagree)
        );
        assert_eq!(
            parse_message("  <s>I counter-propose transferring 3 because fairer</s>\n").unwrap(),
            NegotiationMessage::counter(3.0, "fairer")
        );
    }

    #[test]
    fn renders_templates() {
        assert_eq!(NegotiationMessage::intent("open the door").render(), "<s>I propose to open the door</s>");
        assert_eq!(
            NegotiationMessage::proposal(0.0, "no externality").render(),
            "<s>I propose transferring 0 because no externality</s>"
        );
    }

    #[test]
    fn frame_errors() {
        for bad in ["I propose to x</s>", "<s>I propose to x", "<s>I propose to <s>x</s>", "<s>a</s></s>"] {
            assert!(matches!(parse_message(bad), Err(ProtocolError::Frame(_))), "{bad}");
        }
    }

    #[test]
    fn grammar_errors_carry_span() {
        let err = parse_message("<s>I propose transferring lots because x</s>").unwrap_err();
        match err {
            ProtocolError::Grammar { span, fragment, .. } => {
                assert_eq!(fragment, "lots");
                assert_eq!(&"<s>I propose transferring lots because x</s>"[span], "lots");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_message("<s>hello</s>"), Err(ProtocolError::Grammar { .. })));
        assert!(matches!(
            parse_message("<s>I counter-propose because nope</s>"),
            Err(ProtocolError::Grammar { .. })
        ));
        assert!(matches!(
            parse_message("<s>I propose transferring NaN because x</s>"),
            Err(ProtocolError::Grammar { .. })
        ));
        assert!(matches!(
            parse_message("<s>I propose transferring 4</s>"),
            Err(ProtocolError::Grammar { .. })
        ));
    }

    #[test]
    fn minimal_agreement() {
        let mut s = Session::new(vec![0, 1], 3).unwrap();
        s.advance(0, NegotiationMessage::proposal(5.5, "lever cost")).unwrap();
        let status = s.advance(1, NegotiationMessage::agree("fair")).unwrap().clone();
        assert_eq!(
            status,
            SessionStatus::Agreed(AgreedProposal { proposer: 0, proposal: TransferProposal::new(5.5, "lever cost") })
        );
        assert_eq!(s.advance(0, NegotiationMessage::agree("x")), Err(SessionError::Closed));
        assert_eq!(s.transcript().len(), 2);
    }

    #[test]
    fn times_out_without_unanimity() {
        let mut s = Session::new(vec![0, 1, 2, 3], 1).unwrap();
        s.advance(0, NegotiationMessage::proposal(1.0, "a")).unwrap();
        s.advance(1, NegotiationMessage::agree("ok")).unwrap();
        s.advance(2, NegotiationMessage::disagree("no")).unwrap();
        assert_eq!(s.advance(3, NegotiationMessage::agree("ok")).unwrap(), &SessionStatus::TimedOut);
    }

    #[test]
    fn counter_proposal_invalidates_agrees() {
        let mut s = Session::new(vec![0, 1, 2, 3], 3).unwrap();
        s.advance(0, NegotiationMessage::proposal(1.0, "a")).unwrap();
        s.advance(1, NegotiationMessage::agree("ok")).unwrap();
        s.advance(2, NegotiationMessage::counter(2.0, "b")).unwrap();
        s.advance(3, NegotiationMessage::agree("ok")).unwrap();
        s.advance(0, NegotiationMessage::agree("ok")).unwrap();
        assert!(s.is_open(), "agent 1's agree predates the counter");
        let st = s.advance(1, NegotiationMessage::agree("ok")).unwrap();
        assert!(matches!(st, SessionStatus::Agreed(a) if a.proposer == 2 && a.proposal.amount == 2.0));
    }

    #[test]
    fn enforces_turn_order_and_membership() {
        let mut s = Session::new(vec![3, 1], 2).unwrap();
        assert_eq!(s.next_speaker(), Some(3));
        assert_eq!(
            s.advance(1, NegotiationMessage::intent("x")),
            Err(SessionError::OutOfTurn { expected: 3, got: 1 })
        );
        assert_eq!(s.advance(7, NegotiationMessage::intent("x")), Err(SessionError::UnknownSender(7)));
        s.skip(3).unwrap();
        assert_eq!(s.next_speaker(), Some(1));
        assert_eq!(s.round(), 1);
        s.skip(1).unwrap();
        assert_eq!(s.round(), 2);
    }

    #[test]
    fn transcript_jsonl_has_raw_and_parsed() {
        let mut s = Session::new(vec![0, 1], 1).unwrap();
        s.advance(0, NegotiationMessage::intent("pull the lever")).unwrap();
        let line: serde_json::Value = serde_json::from_str(s.transcript_jsonl().lines().next().unwrap()).unwrap();
        assert_eq!(line["round"], 1);
        assert_eq!(line["sender"], 0);
        assert_eq!(line["raw"], "<s>I propose to pull the lever</s>");
        assert_eq!(line["parsed"]["type"], "intent");
        let back: TranscriptLine = serde_json::from_value(line).unwrap();
        assert_eq!(parse_message(&back.raw).unwrap(), back.parsed);
    }
}
