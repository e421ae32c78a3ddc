//! Fair-payment escrow for delegated pairings.
//!
//! A client posts SM queries with a fee, a server claims them against a
//! deposit and returns results, the client then posts the pairing task, the
//! same server claims and answers it, and settlement runs the pairing check
//! on the stored values. The server receives fee and deposits only if the
//! check passes; otherwise everything goes to the client.
//!
//! All transitions go through [`Escrow::apply`], one at a time. Failed
//! commands change nothing.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpsm::bpsm_verify;
use crate::pairing::GtElement;

pub type Amount = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Account {
    Client(u32),
    Server(u32),
    Escrow,
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Account::Client(i) => write!(f, "client{i}"),
            Account::Server(i) => write!(f, "server{i}"),
            Account::Escrow => f.write_str("escrow"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    SmPosted,
    SmClaimed,
    SmReturned,
    PairPosted,
    PairClaimed,
    PairReturned,
    SettledPaid,
    SettledRefunded,
}

impl Phase {
    pub fn is_settled(self) -> bool {
        matches!(self, Phase::SettledPaid | Phase::SettledRefunded)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EscrowError {
    #[error("{account} holds {balance}, needs {needed}")]
    InsufficientFunds {
        account: Account,
        balance: Amount,
        needed: Amount,
    },
    #[error("task is {actual:?}, operation needs {expected:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("{0} may not perform this operation")]
    WrongParty(Account),
    #[error("no task {0:?}")]
    UnknownTask(TaskId),
    #[error("amounts must be positive")]
    ZeroAmount,
}

/// The four pairing values a server returns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairResults {
    pub h1: GtElement,
    pub h2: GtElement,
    pub l1: GtElement,
    pub l2: GtElement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscrowTask {
    pub id: TaskId,
    pub phase: Phase,
    pub client: Account,
    pub server: Option<Account>,
    pub fee: Amount,
    /// Sum of the deposits made so far.
    pub deposit: Amount,
    pub sm_queries: Vec<u8>,
    pub sm_results: Option<Vec<u8>>,
    pub pair_queries: Option<Vec<u8>>,
    /// The check exponent, escrowed so settlement can verify.
    pub check_x: Option<BigUint>,
    pub pair_results: Option<PairResults>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettlementOutcome {
    Paid,
    Refunded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    UploadSm {
        client: Account,
        fee: Amount,
        queries: Vec<u8>,
    },
    GetSm {
        server: Account,
        task: TaskId,
        deposit: Amount,
    },
    SubmitSmResult {
        server: Account,
        task: TaskId,
        results: Vec<u8>,
    },
    /// The client found the SM results wrong; refund without a pairing stage.
    RejectSm {
        client: Account,
        task: TaskId,
    },
    UploadTask {
        client: Account,
        task: TaskId,
        queries: Vec<u8>,
        x: BigUint,
    },
    GetTask {
        server: Account,
        task: TaskId,
        deposit: Amount,
    },
    SubmitResult {
        server: Account,
        task: TaskId,
        results: PairResults,
    },
    Settle {
        task: TaskId,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::UploadSm { .. } => "upload_sm",
            Command::GetSm { .. } => "get_sm",
            Command::SubmitSmResult { .. } => "submit_sm_result",
            Command::RejectSm { .. } => "reject_sm",
            Command::UploadTask { .. } => "upload_task",
            Command::GetTask { .. } => "get_task",
            Command::SubmitResult { .. } => "submit_result",
            Command::Settle { .. } => "settle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: Account,
    pub to: Account,
    pub amount: Amount,
}

/// One line of the transition log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub seq: u64,
    pub op: String,
    pub task: TaskId,
    pub party: Option<Account>,
    pub amounts: Vec<Transfer>,
    pub phase_before: Option<Phase>,
    pub phase_after: Phase,
}

/// Non-negative balances with a fixed total.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Ledger {
    balances: BTreeMap<Account, Amount>,
}

impl Ledger {
    pub fn new(initial: impl IntoIterator<Item = (Account, Amount)>) -> Ledger {
        let mut balances: BTreeMap<Account, Amount> = initial.into_iter().collect();
        balances.entry(Account::Escrow).or_insert(0);
        Ledger { balances }
    }

    pub fn balance(&self, a: Account) -> Amount {
        self.balances.get(&a).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u128 {
        self.balances.values().map(|&v| v as u128).sum()
    }

    pub fn balances(&self) -> &BTreeMap<Account, Amount> {
        &self.balances
    }

    fn check(&self, from: Account, amount: Amount) -> Result<(), EscrowError> {
        let balance = self.balance(from);
        if balance < amount {
            return Err(EscrowError::InsufficientFunds {
                account: from,
                balance,
                needed: amount,
            });
        }
        Ok(())
    }

    fn transfer(&mut self, from: Account, to: Account, amount: Amount) -> Transfer {
        *self.balances.get_mut(&from).expect("checked") -= amount;
        *self.balances.entry(to).or_insert(0) += amount;
        Transfer { from, to, amount }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Escrow {
    ledger: Ledger,
    tasks: Vec<EscrowTask>,
    next_seq: u64,
    log: Vec<Transition>,
    keep_log: bool,
}

impl Escrow {
    pub fn new(ledger: Ledger) -> Escrow {
        Escrow {
            ledger,
            tasks: Vec::new(),
            next_seq: 0,
            log: Vec::new(),
            keep_log: true,
        }
    }

    /// Skips log retention. Used by exhaustive searches that clone states.
    pub fn without_log(mut self) -> Escrow {
        self.keep_log = false;
        self
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn tasks(&self) -> &[EscrowTask] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> Result<&EscrowTask, EscrowError> {
        self.tasks.get(id.0 as usize).ok_or(EscrowError::UnknownTask(id))
    }

    pub fn log(&self) -> &[Transition] {
        &self.log
    }

    /// The log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|t| serde_json::to_string(t).expect("plain data") + "\n")
            .collect()
    }

    pub fn upload_sm(&mut self, client: Account, queries: Vec<u8>, fee: Amount) -> Result<TaskId, EscrowError> {
        self.apply(Command::UploadSm { client, fee, queries }).map(|e| e.task)
    }

    /// Claims the SM queries and returns them.
    pub fn get_sm(&mut self, server: Account, task: TaskId, deposit: Amount) -> Result<Vec<u8>, EscrowError> {
        self.apply(Command::GetSm { server, task, deposit })?;
        Ok(self.task(task)?.sm_queries.clone())
    }

    pub fn submit_sm_result(&mut self, server: Account, task: TaskId, results: Vec<u8>) -> Result<(), EscrowError> {
        self.apply(Command::SubmitSmResult { server, task, results }).map(drop)
    }

    pub fn reject_sm(&mut self, client: Account, task: TaskId) -> Result<(), EscrowError> {
        self.apply(Command::RejectSm { client, task }).map(drop)
    }

    pub fn upload_task(&mut self, client: Account, task: TaskId, queries: Vec<u8>, x: BigUint) -> Result<(), EscrowError> {
        self.apply(Command::UploadTask { client, task, queries, x }).map(drop)
    }

    /// Claims the pairing queries and returns them.
    pub fn get_task(&mut self, server: Account, task: TaskId, deposit: Amount) -> Result<Vec<u8>, EscrowError> {
        self.apply(Command::GetTask { server, task, deposit })?;
        Ok(self.task(task)?.pair_queries.clone().unwrap_or_default())
    }

    pub fn submit_result(&mut self, server: Account, task: TaskId, results: PairResults) -> Result<(), EscrowError> {
        self.apply(Command::SubmitResult { server, task, results }).map(drop)
    }

    pub fn settle(&mut self, task: TaskId) -> Result<SettlementOutcome, EscrowError> {
        self.apply(Command::Settle { task })?;
        Ok(match self.task(task)?.phase {
            Phase::SettledPaid => SettlementOutcome::Paid,
            _ => SettlementOutcome::Refunded,
        })
    }

    /// Applies one command atomically.
    pub fn apply(&mut self, cmd: Command) -> Result<Transition, EscrowError> {
        let op = cmd.name();
        let (task, party, before, transfers) = match cmd {
            Command::UploadSm { client, fee, queries } => {
                positive(fee)?;
                self.ledger.check(client, fee)?;
                let id = TaskId(self.tasks.len() as u64);
                let t = self.ledger.transfer(client, Account::Escrow, fee);
                self.tasks.push(EscrowTask {
                    id,
                    phase: Phase::SmPosted,
                    client,
                    server: None,
                    fee,
                    deposit: 0,
                    sm_queries: queries,
                    sm_results: None,
                    pair_queries: None,
                    check_x: None,
                    pair_results: None,
                });
                (id, Some(client), None, vec![t])
            }
            Command::GetSm { server, task, deposit } => {
                positive(deposit)?;
                server_account(server)?;
                self.expect_phase(task, Phase::SmPosted)?;
                self.ledger.check(server, deposit)?;
                let t = self.ledger.transfer(server, Account::Escrow, deposit);
                let tk = &mut self.tasks[task.0 as usize];
                tk.server = Some(server);
                tk.deposit += deposit;
                tk.phase = Phase::SmClaimed;
                (task, Some(server), Some(Phase::SmPosted), vec![t])
            }
            Command::SubmitSmResult { server, task, results } => {
                self.expect_phase(task, Phase::SmClaimed)?;
                self.expect_server(task, server)?;
                let tk = &mut self.tasks[task.0 as usize];
                tk.sm_results = Some(results);
                tk.phase = Phase::SmReturned;
                (task, Some(server), Some(Phase::SmClaimed), vec![])
            }
            Command::RejectSm { client, task } => {
                self.expect_phase(task, Phase::SmReturned)?;
                self.expect_client(task, client)?;
                let transfers = self.pay_out(task, client);
                self.tasks[task.0 as usize].phase = Phase::SettledRefunded;
                (task, Some(client), Some(Phase::SmReturned), transfers)
            }
            Command::UploadTask { client, task, queries, x } => {
                self.expect_phase(task, Phase::SmReturned)?;
                self.expect_client(task, client)?;
                let tk = &mut self.tasks[task.0 as usize];
                tk.pair_queries = Some(queries);
                tk.check_x = Some(x);
                tk.phase = Phase::PairPosted;
                (task, Some(client), Some(Phase::SmReturned), vec![])
            }
            Command::GetTask { server, task, deposit } => {
                positive(deposit)?;
                self.expect_phase(task, Phase::PairPosted)?;
                self.expect_server(task, server)?;
                self.ledger.check(server, deposit)?;
                let t = self.ledger.transfer(server, Account::Escrow, deposit);
                let tk = &mut self.tasks[task.0 as usize];
                tk.deposit += deposit;
                tk.phase = Phase::PairClaimed;
                (task, Some(server), Some(Phase::PairPosted), vec![t])
            }
            Command::SubmitResult { server, task, results } => {
                self.expect_phase(task, Phase::PairClaimed)?;
                self.expect_server(task, server)?;
                let tk = &mut self.tasks[task.0 as usize];
                tk.pair_results = Some(results);
                tk.phase = Phase::PairReturned;
                (task, Some(server), Some(Phase::PairClaimed), vec![])
            }
            Command::Settle { task } => {
                self.expect_phase(task, Phase::PairReturned)?;
                let tk = &self.tasks[task.0 as usize];
                let passed = settlement_check(tk);
                let (to, phase) = if passed {
                    (tk.server.expect("claimed"), Phase::SettledPaid)
                } else {
                    (tk.client, Phase::SettledRefunded)
                };
                let transfers = self.pay_out(task, to);
                self.tasks[task.0 as usize].phase = phase;
                (task, None, Some(Phase::PairReturned), transfers)
            }
        };
        let rec = Transition {
            seq: self.next_seq,
            op: op.to_string(),
            task,
            party,
            amounts: transfers,
            phase_before: before,
            phase_after: self.tasks[task.0 as usize].phase,
        };
        self.next_seq += 1;
        if self.keep_log {
            self.log.push(rec.clone());
        }
        Ok(rec)
    }

    /// Fee and all deposits of `task` leave the escrow for `to`.
    fn pay_out(&mut self, task: TaskId, to: Account) -> Vec<Transfer> {
        let tk = &self.tasks[task.0 as usize];
        let mut out = Vec::new();
        for amount in [tk.fee, tk.deposit] {
            if amount > 0 {
                out.push(self.ledger.transfer(Account::Escrow, to, amount));
            }
        }
        out
    }

    fn expect_phase(&self, task: TaskId, expected: Phase) -> Result<(), EscrowError> {
        let actual = self.task(task)?.phase;
        if actual != expected {
            return Err(EscrowError::WrongPhase { expected, actual });
        }
        Ok(())
    }

    fn expect_server(&self, task: TaskId, who: Account) -> Result<(), EscrowError> {
        if self.task(task)?.server != Some(who) {
            return Err(EscrowError::WrongParty(who));
        }
        Ok(())
    }

    fn expect_client(&self, task: TaskId, who: Account) -> Result<(), EscrowError> {
        if self.task(task)?.client != who {
            return Err(EscrowError::WrongParty(who));
        }
        Ok(())
    }
}

/// The check settlement runs on a returned task.
pub fn settlement_check(task: &EscrowTask) -> bool {
    match (&task.pair_results, &task.check_x) {
        (Some(r), Some(x)) => bpsm_verify(&r.h1, &r.h2, &r.l1, &r.l2, x).passed(),
        _ => false,
    }
}

fn positive(amount: Amount) -> Result<(), EscrowError> {
    if amount == 0 {
        return Err(EscrowError::ZeroAmount);
    }
    Ok(())
}

fn server_account(a: Account) -> Result<(), EscrowError> {
    match a {
        Account::Server(_) => Ok(()),
        other => Err(EscrowError::WrongParty(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpsm::gen_coeffs;
    use crate::pairing::tate_pairing;
    use crate::params::preset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const C: Account = Account::Client(0);
    const S: Account = Account::Server(0);
    const OTHER: Account = Account::Server(1);

    fn fresh() -> Escrow {
        Escrow::new(Ledger::new([(C, 100), (S, 50), (OTHER, 50)]))
    }

    fn results(tamper: bool) -> (PairResults, BigUint) {
        let pp = preset("toy-32").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = pp.curve().random_subgroup_point(&mut rng).unwrap();
        let e = tate_pairing(&a, pp.generator(), &pp).unwrap();
        let s = gen_coeffs(pp.r(), 64, &mut rng);
        let r = pp.r();
        let pw = |k: BigUint| e.pow(&(k % r));
        let mut out = PairResults {
            h1: pw(&s.a1 * &s.a2),
            h2: pw(&s.b1 * &s.b2),
            l1: pw(&s.x * &s.b1 * &s.b2),
            l2: pw(&s.x * &s.a1 * &s.a2),
        };
        if tamper {
            out.h1 = out.h1.mul(&e);
        }
        (out, s.x)
    }

    fn run_to_returned(esc: &mut Escrow, tamper: bool) -> TaskId {
        let id = esc.upload_sm(C, b"sm".to_vec(), 10).unwrap();
        assert_eq!(esc.get_sm(S, id, 5).unwrap(), b"sm");
        esc.submit_sm_result(S, id, b"q".to_vec()).unwrap();
        let (res, x) = results(tamper);
        esc.upload_task(C, id, b"pair".to_vec(), x).unwrap();
        assert_eq!(esc.get_task(S, id, 5).unwrap(), b"pair");
        esc.submit_result(S, id, res).unwrap();
        id
    }

    #[test]
    fn upload_moves_fee() {
        let mut esc = fresh();
        let a = esc.upload_sm(C, vec![], 10).unwrap();
        assert_eq!(esc.ledger().balance(C), 90);
        assert_eq!(esc.ledger().balance(Account::Escrow), 10);
        let before = esc.clone();
        assert!(matches!(
            esc.upload_sm(C, vec![], 1000),
            Err(EscrowError::InsufficientFunds { .. })
        ));
        assert_eq!(esc, before);
        let b = esc.upload_sm(C, vec![], 10).unwrap();
        assert_ne!(a, b);
        assert_eq!(esc.upload_sm(C, vec![], 0), Err(EscrowError::ZeroAmount));
    }

    #[test]
    fn claim_rules() {
        let mut esc = fresh();
        let id = esc.upload_sm(C, b"payload".to_vec(), 10).unwrap();
        assert!(matches!(esc.get_sm(S, id, 500), Err(EscrowError::InsufficientFunds { .. })));
        assert_eq!(esc.get_sm(C, id, 5), Err(EscrowError::WrongParty(C)));
        assert_eq!(esc.get_sm(S, id, 5).unwrap(), b"payload");
        assert_eq!(esc.ledger().balance(S), 45);
        assert_eq!(esc.ledger().balance(Account::Escrow), 15);
        assert!(matches!(esc.get_sm(OTHER, id, 5), Err(EscrowError::WrongPhase { .. })));
        assert_eq!(esc.get_sm(S, TaskId(9), 5), Err(EscrowError::UnknownTask(TaskId(9))));
    }

    #[test]
    fn submit_rules() {
        let mut esc = fresh();
        let id = esc.upload_sm(C, vec![], 10).unwrap();
        esc.get_sm(S, id, 5).unwrap();
        assert_eq!(esc.submit_sm_result(OTHER, id, vec![]), Err(EscrowError::WrongParty(OTHER)));
        esc.submit_sm_result(S, id, vec![1]).unwrap();
        assert_eq!(esc.task(id).unwrap().phase, Phase::SmReturned);
        assert!(matches!(esc.submit_sm_result(S, id, vec![]), Err(EscrowError::WrongPhase { .. })));
    }

    #[test]
    fn upload_task_rules() {
        let mut esc = fresh();
        let id = esc.upload_sm(C, vec![], 10).unwrap();
        assert!(matches!(
            esc.upload_task(C, id, vec![], BigUint::from(3u8)),
            Err(EscrowError::WrongPhase { .. })
        ));
        esc.get_sm(S, id, 5).unwrap();
        esc.submit_sm_result(S, id, vec![]).unwrap();
        assert_eq!(
            esc.upload_task(Account::Client(1), id, vec![], BigUint::from(3u8)),
            Err(EscrowError::WrongParty(Account::Client(1)))
        );
        esc.upload_task(C, id, vec![], BigUint::from(3u8)).unwrap();
        assert_eq!(esc.task(id).unwrap().phase, Phase::PairPosted);
        assert_eq!(esc.get_task(OTHER, id, 5), Err(EscrowError::WrongParty(OTHER)));
    }

    #[test]
    fn honest_settlement_pays_server() {
        let mut esc = fresh();
        let id = run_to_returned(&mut esc, false);
        assert_eq!(esc.settle(id).unwrap(), SettlementOutcome::Paid);
        // fee gained, both deposits back
        assert_eq!(esc.ledger().balance(S), 60);
        assert_eq!(esc.ledger().balance(C), 90);
        assert_eq!(esc.ledger().balance(Account::Escrow), 0);
        assert!(matches!(esc.settle(id), Err(EscrowError::WrongPhase { .. })));
    }

    #[test]
    fn tampered_settlement_refunds_client() {
        let mut esc = fresh();
        let id = run_to_returned(&mut esc, true);
        assert_eq!(esc.settle(id).unwrap(), SettlementOutcome::Refunded);
        assert_eq!(esc.ledger().balance(C), 110);
        assert_eq!(esc.ledger().balance(S), 40);
        assert_eq!(esc.task(id).unwrap().phase, Phase::SettledRefunded);
    }

    #[test]
    fn rejected_sm_stage_refunds_client() {
        let mut esc = fresh();
        let id = esc.upload_sm(C, vec![], 10).unwrap();
        esc.get_sm(S, id, 5).unwrap();
        esc.submit_sm_result(S, id, vec![]).unwrap();
        assert_eq!(esc.reject_sm(OTHER, id), Err(EscrowError::WrongParty(OTHER)));
        esc.reject_sm(C, id).unwrap();
        assert_eq!(esc.ledger().balance(C), 105);
        assert_eq!(esc.ledger().total(), 200);
    }

    #[test]
    fn log_lines() {
        let mut esc = fresh();
        let id = run_to_returned(&mut esc, false);
        esc.settle(id).unwrap();
        let text = esc.log_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        for key in ["seq", "op", "task", "party", "amounts", "phase_before", "phase_after"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        assert_eq!(first["op"], "upload_sm");
        let last: Transition = serde_json::from_str(lines[6]).unwrap();
        assert_eq!(last.seq, 6);
        assert_eq!(last.phase_after, Phase::SettledPaid);
        assert_eq!(last.amounts.len(), 2);
    }
}
