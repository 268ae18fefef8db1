//! Accounts, bearer tokens and the role permission matrix.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use sciflow_core::access::{Principal, Role};
use sciflow_core::clock::Clock;
use sciflow_core::ident::is_valid_ident;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    CreateGraph,
    EditWorkflow,
    Publish,
    Submit,
    MonitorOwn,
    MonitorAny,
    AbortOwn,
    AbortAny,
    Resubmit,
    ManageUsers,
    ManageBackends,
}

impl Action {
    pub const ALL: [Action; 11] = [
        Action::CreateGraph,
        Action::EditWorkflow,
        Action::Publish,
        Action::Submit,
        Action::MonitorOwn,
        Action::MonitorAny,
        Action::AbortOwn,
        Action::AbortAny,
        Action::Resubmit,
        Action::ManageUsers,
        Action::ManageBackends,
    ];

    /// Actions that only apply to the caller's own resources.
    pub fn is_own_scoped(self) -> bool {
        matches!(
            self,
            Action::EditWorkflow | Action::Publish | Action::MonitorOwn | Action::AbortOwn | Action::Resubmit
        )
    }
}

/// The role matrix. Admins may do everything; power users everything except
/// account and backend management and acting on other users' instances; end
/// users only run, watch, abort and resubmit their own instances.
pub fn role_allows(role: Role, action: Action) -> bool {
    use Action::*;
    match role {
        Role::Admin => true,
        Role::PowerUser => !matches!(action, ManageUsers | ManageBackends | MonitorAny | AbortAny),
        Role::EndUser => matches!(action, Submit | MonitorOwn | AbortOwn | Resubmit),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{user} ({role}) may not {action:?}{}", owner.as_ref().map(|o| format!(" resources of {o}")).unwrap_or_default())]
pub struct Denied {
    pub user: String,
    pub role: &'static str,
    pub action: Action,
    pub owner: Option<String>,
}

/// Matrix check plus the ownership rule: own-scoped actions on a resource
/// owned by someone else are denied unless the caller is an admin.
pub fn authorize(p: &Principal, action: Action, owner: Option<&str>) -> Result<(), Denied> {
    let owned = owner.is_none_or(|o| p.owns_or_admin(o));
    if role_allows(p.role, action) && (!action.is_own_scoped() || owned) {
        Ok(())
    } else {
        Err(Denied {
            user: p.user.clone(),
            role: p.role.as_str(),
            action,
            owner: owner.map(str::to_string),
        })
    }
}

/// Picks the own or the any variant depending on who owns the resource.
pub fn authorize_scoped(p: &Principal, own: Action, any: Action, owner: &str) -> Result<(), Denied> {
    if p.user == owner {
        authorize(p, own, Some(owner))
    } else {
        authorize(p, any, None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("invalid username or password")]
    InvalidCredentials,
    #[error("account is disabled")]
    AccountDisabled,
    #[error("missing bearer token")]
    MissingToken,
    #[error("invalid or revoked token")]
    InvalidToken,
    #[error("token expired")]
    TokenExpired,
    #[error("user {0} already exists")]
    DuplicateUser(String),
    #[error("no user {0}")]
    UnknownUser(String),
    #[error("invalid user name {0:?}")]
    InvalidUsername(String),
    #[error("password must not be empty")]
    EmptyPassword,
    #[error("account storage: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasswordHash {
    pub salt: String,
    pub iterations: u32,
    pub hash: String,
}

impl PasswordHash {
    pub fn new(password: &str, iterations: u32) -> Self {
        let mut salt = [0u8; 16];
        rand::rng().fill_bytes(&mut salt);
        PasswordHash {
            salt: hex::encode(salt),
            iterations,
            hash: hex::encode(derive(password, &salt, iterations)),
        }
    }

    pub fn verify(&self, password: &str) -> bool {
        let (Ok(salt), Ok(expected)) = (hex::decode(&self.salt), hex::decode(&self.hash)) else {
            return false;
        };
        derive(password, &salt, self.iterations).ct_eq(&expected).into()
    }
}

fn derive(password: &str, salt: &[u8], iterations: u32) -> [u8; 32] {
    let mut out = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub username: String,
    pub role: Role,
    pub password: PasswordHash,
    pub created_at: u64,
    pub active: bool,
}

/// What the API shows about an account.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserView {
    pub username: String,
    pub role: Role,
    pub created_at: u64,
    pub active: bool,
}

impl From<&UserRecord> for UserView {
    fn from(u: &UserRecord) -> Self {
        UserView {
            username: u.username.clone(),
            role: u.role,
            created_at: u.created_at,
            active: u.active,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedToken {
    pub token: String,
    pub user: String,
    pub role: Role,
    pub expires_at: u64,
}

#[derive(Debug, Clone)]
struct Session {
    user: String,
    expires_at: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct UserUpdate {
    pub role: Option<Role>,
    pub password: Option<String>,
    pub active: Option<bool>,
}

/// Accounts persisted as one JSON file; sessions live in memory only, so a
/// restart logs everybody out.
pub struct Accounts {
    path: Option<PathBuf>,
    users: RwLock<BTreeMap<String, UserRecord>>,
    /// keyed by the SHA-256 of the token
    sessions: RwLock<HashMap<String, Session>>,
    clock: Arc<dyn Clock>,
    ttl_ms: u64,
    iterations: u32,
    dummy: PasswordHash,
}

fn token_key(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

impl Accounts {
    /// Loads accounts from `path` (created on first write) or keeps them in
    /// memory when `path` is None.
    pub fn open(path: Option<PathBuf>, clock: Arc<dyn Clock>, ttl_s: u64, iterations: u32) -> Result<Self, AuthError> {
        let users = match &path {
            Some(p) if p.exists() => {
                let bytes = std::fs::read(p).map_err(|e| AuthError::Storage(e.to_string()))?;
                let list: Vec<UserRecord> =
                    serde_json::from_slice(&bytes).map_err(|e| AuthError::Storage(format!("{}: {e}", p.display())))?;
                list.into_iter().map(|u| (u.username.clone(), u)).collect()
            }
            _ => BTreeMap::new(),
        };
        Ok(Accounts {
            path,
            users: RwLock::new(users),
            sessions: RwLock::new(HashMap::new()),
            clock,
            ttl_ms: ttl_s.saturating_mul(1000),
            iterations,
            dummy: PasswordHash::new("", iterations),
        })
    }

    fn persist(&self, users: &BTreeMap<String, UserRecord>) -> Result<(), AuthError> {
        let Some(path) = &self.path else { return Ok(()) };
        let list: Vec<&UserRecord> = users.values().collect();
        let json = serde_json::to_vec_pretty(&list).expect("accounts serialize");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| AuthError::Storage(e.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.users.read().unwrap().is_empty()
    }

    pub fn create_user(&self, username: &str, password: &str, role: Role, active: bool) -> Result<UserView, AuthError> {
        if !is_valid_ident(username) {
            return Err(AuthError::InvalidUsername(username.to_string()));
        }
        if password.is_empty() {
            return Err(AuthError::EmptyPassword);
        }
        let record = UserRecord {
            username: username.to_string(),
            role,
            password: PasswordHash::new(password, self.iterations),
            created_at: self.clock.now_ms(),
            active,
        };
        let mut users = self.users.write().unwrap();
        if users.contains_key(username) {
            return Err(AuthError::DuplicateUser(username.to_string()));
        }
        let view = UserView::from(&record);
        users.insert(username.to_string(), record);
        self.persist(&users)?;
        Ok(view)
    }

    pub fn update_user(&self, username: &str, update: UserUpdate) -> Result<UserView, AuthError> {
        if update.password.as_deref() == Some("") {
            return Err(AuthError::EmptyPassword);
        }
        let mut users = self.users.write().unwrap();
        let user = users
            .get_mut(username)
            .ok_or_else(|| AuthError::UnknownUser(username.to_string()))?;
        if let Some(role) = update.role {
            user.role = role;
        }
        if let Some(pw) = &update.password {
            user.password = PasswordHash::new(pw, self.iterations);
        }
        if let Some(active) = update.active {
            user.active = active;
        }
        let view = UserView::from(&*user);
        self.persist(&users)?;
        drop(users);
        if !view.active || update.password.is_some() {
            self.revoke_user(username);
        }
        Ok(view)
    }

    pub fn list_users(&self) -> Vec<UserView> {
        self.users.read().unwrap().values().map(UserView::from).collect()
    }

    pub fn authenticate(&self, username: &str, password: &str) -> Result<IssuedToken, AuthError> {
        let user = self.users.read().unwrap().get(username).cloned();
        let Some(user) = user else {
            // same amount of work as a real check
            let _ = self.dummy.verify(password);
            return Err(AuthError::InvalidCredentials);
        };
        if !user.password.verify(password) {
            return Err(AuthError::InvalidCredentials);
        }
        if !user.active {
            return Err(AuthError::AccountDisabled);
        }
        let mut raw = [0u8; 32];
        rand::rng().fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let now = self.clock.now_ms();
        let expires_at = now.saturating_add(self.ttl_ms);
        let mut sessions = self.sessions.write().unwrap();
        // expired sessions keep answering "expired" for one more TTL
        sessions.retain(|_, s| s.expires_at.saturating_add(self.ttl_ms) > now);
        sessions.insert(
            token_key(&token),
            Session {
                user: user.username.clone(),
                expires_at,
            },
        );
        Ok(IssuedToken {
            token,
            user: user.username,
            role: user.role,
            expires_at,
        })
    }

    /// Resolves a bearer token to the caller's current identity.
    pub fn validate(&self, token: &str) -> Result<Principal, AuthError> {
        let key = token_key(token);
        let session = self.sessions.read().unwrap().get(&key).cloned();
        let session = session.ok_or(AuthError::InvalidToken)?;
        if self.clock.now_ms() >= session.expires_at {
            return Err(AuthError::TokenExpired);
        }
        let users = self.users.read().unwrap();
        match users.get(&session.user) {
            Some(u) if u.active => Ok(Principal::new(u.username.clone(), u.role)),
            _ => Err(AuthError::InvalidToken),
        }
    }

    pub fn revoke(&self, token: &str) -> bool {
        self.sessions.write().unwrap().remove(&token_key(token)).is_some()
    }

    pub fn revoke_user(&self, username: &str) {
        self.sessions.write().unwrap().retain(|_, s| s.user != username);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sciflow_core::clock::ManualClock;

    fn accounts(clock: Arc<ManualClock>) -> Accounts {
        Accounts::open(None, clock, 10, 10).unwrap()
    }

    #[test]
    fn matrix_denials() {
        use Action::*;
        for a in [CreateGraph, EditWorkflow, Publish, ManageUsers, ManageBackends] {
            assert!(!role_allows(Role::EndUser, a));
        }
        for a in [ManageUsers, ManageBackends] {
            assert!(!role_allows(Role::PowerUser, a));
        }
        assert!(Action::ALL.iter().all(|a| role_allows(Role::Admin, *a)));
        assert!(role_allows(Role::EndUser, Submit));
    }

    #[test]
    fn ownership_rule() {
        let power = Principal::new("pat", Role::PowerUser);
        let admin = Principal::new("root", Role::Admin);
        let end = Principal::new("eve", Role::EndUser);
        assert!(authorize_scoped(&power, Action::AbortOwn, Action::AbortAny, "eve").is_err());
        assert!(authorize_scoped(&admin, Action::AbortOwn, Action::AbortAny, "eve").is_ok());
        assert!(authorize_scoped(&end, Action::AbortOwn, Action::AbortAny, "eve").is_ok());
        assert!(authorize(&end, Action::Resubmit, Some("pat")).is_err());
        assert!(authorize(&end, Action::CreateGraph, None).is_err());
    }

    #[test]
    fn login_expiry_and_revocation() {
        let clock = Arc::new(ManualClock::new(1_000));
        let acc = accounts(clock.clone());
        acc.create_user("alice", "secret", Role::PowerUser, true).unwrap();
        acc.create_user("bob", "pw", Role::EndUser, false).unwrap();
        assert_eq!(acc.authenticate("alice", "wrong"), Err(AuthError::InvalidCredentials));
        assert_eq!(acc.authenticate("nobody", "secret"), Err(AuthError::InvalidCredentials));
        assert_eq!(acc.authenticate("bob", "pw"), Err(AuthError::AccountDisabled));
        let t = acc.authenticate("alice", "secret").unwrap();
        assert_eq!(t.expires_at, 11_000);
        assert_eq!(acc.validate(&t.token).unwrap().role, Role::PowerUser);
        clock.set(10_999);
        assert!(acc.validate(&t.token).is_ok());
        clock.set(11_000);
        assert_eq!(acc.validate(&t.token), Err(AuthError::TokenExpired));

        let t = acc.authenticate("alice", "secret").unwrap();
        assert!(acc.revoke(&t.token));
        assert_eq!(acc.validate(&t.token), Err(AuthError::InvalidToken));

        let t = acc.authenticate("alice", "secret").unwrap();
        acc.update_user(
            "alice",
            UserUpdate {
                active: Some(false),
                ..UserUpdate::default()
            },
        )
        .unwrap();
        assert_eq!(acc.validate(&t.token), Err(AuthError::InvalidToken));
    }

    #[test]
    fn users_persist() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("users.json");
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(0));
        let acc = Accounts::open(Some(path.clone()), clock.clone(), 10, 10).unwrap();
        acc.create_user("alice", "secret", Role::Admin, true).unwrap();
        assert_eq!(
            acc.create_user("alice", "x", Role::Admin, true),
            Err(AuthError::DuplicateUser("alice".into()))
        );
        assert!(matches!(
            acc.create_user("a.b", "x", Role::Admin, true),
            Err(AuthError::InvalidUsername(_))
        ));
        let again = Accounts::open(Some(path), clock, 10, 10).unwrap();
        assert!(again.authenticate("alice", "secret").is_ok());
        let text = std::fs::read_to_string(dir.path().join("users.json")).unwrap();
        assert!(!text.contains("secret"));
    }
}
