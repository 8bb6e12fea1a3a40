//! Accounts, privilege schemas, sessions and request quotas.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sonoma_core::api::SessionAccounting;
use sonoma_core::model::{now_us, OutputFormat, Privilege, Session, SessionId};
use sonoma_core::{Error, ErrorCode, Result};

pub const GUEST_USER: &str = "guest";
const QUOTA_WINDOW: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PrivilegeSchema {
    pub max_requests_per_minute: u32,
    pub async_allowed: bool,
    /// Largest number of distinct nodes in one asynchronous composite.
    pub max_nodes_per_composite: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Quotas {
    pub guest: PrivilegeSchema,
    pub registered: PrivilegeSchema,
}

impl Default for Quotas {
    fn default() -> Self {
        Self {
            guest: PrivilegeSchema {
                max_requests_per_minute: 10,
                async_allowed: false,
                max_nodes_per_composite: 0,
            },
            registered: PrivilegeSchema {
                max_requests_per_minute: 120,
                async_allowed: true,
                max_nodes_per_composite: 32,
            },
        }
    }
}

impl Quotas {
    pub fn validate(&self) -> Result<()> {
        if self.guest.async_allowed {
            return Err(Error::param("guests may not run asynchronous measurements"));
        }
        if self.guest.max_requests_per_minute == 0 || self.registered.max_requests_per_minute == 0 {
            return Err(Error::param("request quotas must be positive"));
        }
        if self.guest.max_requests_per_minute > self.registered.max_requests_per_minute {
            return Err(Error::param("guest quota exceeds registered quota"));
        }
        Ok(())
    }

    pub fn schema(&self, p: Privilege) -> PrivilegeSchema {
        match p {
            Privilege::Guest => self.guest,
            Privilege::Registered => self.registered,
        }
    }
}

/// A stored credential: plain text or a hex SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Account {
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

impl Account {
    fn accepts(&self, credential: &str) -> bool {
        match (&self.credential, &self.sha256) {
            (Some(c), _) => c == credential,
            (None, Some(h)) => sha256_hex(credential).eq_ignore_ascii_case(h),
            (None, None) => false,
        }
    }
}

pub fn sha256_hex(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounts {
    pub accounts: Vec<Account>,
}

impl Accounts {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| Error::param(format!("bad accounts file: {e}")))
    }

    /// Guest with an empty credential, or a matching account.
    pub fn authenticate(&self, user: &str, credential: &str) -> Result<Privilege> {
        if user == GUEST_USER && credential.is_empty() {
            return Ok(Privilege::Guest);
        }
        if self.accounts.iter().any(|a| a.user == user && a.accepts(credential)) {
            return Ok(Privilege::Registered);
        }
        Err(Error::new(ErrorCode::AuthFailed, format!("authentication failed for {user:?}")))
    }
}

struct SessionEntry {
    session: Session,
    open: bool,
    recent: VecDeque<Instant>,
}

/// Open and closed sessions; closed ones stay for accounting.
pub struct Sessions {
    quotas: Quotas,
    inner: Mutex<HashMap<SessionId, SessionEntry>>,
}

impl Sessions {
    pub fn new(quotas: Quotas) -> Self {
        Self {
            quotas,
            inner: Mutex::default(),
        }
    }

    pub fn open(&self, user: &str, privilege: Privilege, zip: bool, format: OutputFormat) -> Session {
        let session = Session {
            id: SessionId::generate(),
            user: user.to_owned(),
            privilege,
            zip_results: zip,
            format_results: format,
            opened_at: now_us(),
            request_count: 0,
        };
        self.inner.lock().unwrap().insert(
            session.id.clone(),
            SessionEntry {
                session: session.clone(),
                open: true,
                recent: VecDeque::new(),
            },
        );
        session
    }

    /// Validates the session and charges one request against its quota.
    pub fn admit(&self, id: &SessionId) -> Result<(Session, PrivilegeSchema)> {
        self.admit_at(id, Instant::now())
    }

    pub fn admit_at(&self, id: &SessionId, now: Instant) -> Result<(Session, PrivilegeSchema)> {
        let mut inner = self.inner.lock().unwrap();
        let e = inner
            .get_mut(id)
            .filter(|e| e.open)
            .ok_or_else(|| unknown_session(id))?;
        let schema = self.quotas.schema(e.session.privilege);
        while e.recent.front().is_some_and(|t| now.duration_since(*t) >= QUOTA_WINDOW) {
            e.recent.pop_front();
        }
        if e.recent.len() >= schema.max_requests_per_minute as usize {
            return Err(Error::new(
                ErrorCode::Quota,
                format!("{} requests per minute exceeded", schema.max_requests_per_minute),
            ));
        }
        e.recent.push_back(now);
        e.session.request_count += 1;
        Ok((e.session.clone(), schema))
    }

    pub fn close(&self, id: &SessionId) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        match inner.get_mut(id) {
            Some(e) if e.open => {
                e.open = false;
                Ok(())
            }
            _ => Err(unknown_session(id)),
        }
    }

    pub fn accounting(&self) -> Vec<SessionAccounting> {
        let mut out: Vec<SessionAccounting> = self
            .inner
            .lock()
            .unwrap()
            .values()
            .map(|e| SessionAccounting {
                session_id: e.session.id.clone(),
                user: e.session.user.clone(),
                open: e.open,
                request_count: e.session.request_count,
            })
            .collect();
        out.sort_by(|a, b| a.session_id.as_str().cmp(b.session_id.as_str()));
        out
    }
}

fn unknown_session(id: &SessionId) -> Error {
    Error::new(ErrorCode::UnknownSession, format!("no open session {}", id.as_str()))
}
