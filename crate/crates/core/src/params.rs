//! Problem instance parameters and user addressing.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::field::{FieldError, PrimeField};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamsError {
    #[error("unsupported parameters: U = {0}, at least 3 servers are required")]
    TooFewServers(usize),
    #[error("unsupported parameters: V must be at least 1")]
    NoUsers,
    #[error("T = {t} exceeds the user population UV = {users}")]
    TooManyColluders { t: usize, users: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// User `(server, slot)`, zero-based internally and printed one-based as `(u,v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId {
    pub server: usize,
    pub slot: usize,
}

impl UserId {
    pub fn new(server: usize, slot: usize) -> Self {
        Self { server, slot }
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.server + 1, self.slot + 1)
    }
}

impl Serialize for UserId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.server + 1, self.slot + 1].serialize(s)
    }
}

impl<'de> Deserialize<'de> for UserId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [u, v] = <[usize; 2]>::deserialize(d)?;
        if u == 0 || v == 0 {
            return Err(serde::de::Error::custom("user indices are one-based"));
        }
        Ok(UserId::new(u - 1, v - 1))
    }
}

/// `(U, V, T, q, seed)`: one problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SystemParams {
    #[serde(rename = "U")]
    servers: usize,
    #[serde(rename = "V")]
    users_per_server: usize,
    #[serde(rename = "T")]
    max_colluders: usize,
    q: u64,
    seed: u64,
}

impl SystemParams {
    pub fn new(
        servers: usize,
        users_per_server: usize,
        max_colluders: usize,
        q: u64,
        seed: u64,
    ) -> Result<Self, ParamsError> {
        check_shape(servers, users_per_server, max_colluders)?;
        PrimeField::new(q)?;
        Ok(Self { servers, users_per_server, max_colluders, q, seed })
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn users_per_server(&self) -> usize {
        self.users_per_server
    }

    pub fn max_colluders(&self) -> usize {
        self.max_colluders
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn field(&self) -> PrimeField {
        PrimeField::new(self.q).expect("validated at construction")
    }

    pub fn num_users(&self) -> usize {
        self.servers * self.users_per_server
    }

    /// Position of a user in `(u, v)` lexicographic order.
    pub fn user_index(&self, user: UserId) -> usize {
        debug_assert!(self.contains(user));
        user.server * self.users_per_server + user.slot
    }

    pub fn user_at(&self, index: usize) -> UserId {
        UserId::new(index / self.users_per_server, index % self.users_per_server)
    }

    pub fn contains(&self, user: UserId) -> bool {
        user.server < self.servers && user.slot < self.users_per_server
    }

    /// All users in `(u, v)` lexicographic order.
    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        (0..self.num_users()).map(|i| self.user_at(i))
    }

    /// Source-key length `min{U+V+T-2, UV-1}`.
    pub fn source_key_length(&self) -> usize {
        source_key_length_unchecked(self.servers, self.users_per_server, self.max_colluders)
    }

    /// Whether `T <= (U-1)(V-1)`, the regime where the source-key bound is `U+V+T-2`.
    pub fn small_collusion(&self) -> bool {
        self.max_colluders <= (self.servers - 1) * (self.users_per_server - 1)
    }
}

pub(crate) fn check_shape(u: usize, v: usize, t: usize) -> Result<(), ParamsError> {
    if u < 3 {
        return Err(ParamsError::TooFewServers(u));
    }
    if v < 1 {
        return Err(ParamsError::NoUsers);
    }
    if t > u * v {
        return Err(ParamsError::TooManyColluders { t, users: u * v });
    }
    Ok(())
}

pub(crate) fn source_key_length_unchecked(u: usize, v: usize, t: usize) -> usize {
    (u + v + t - 2).min(u * v - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert_eq!(SystemParams::new(2, 2, 0, 11, 0), Err(ParamsError::TooFewServers(2)));
        assert_eq!(SystemParams::new(3, 0, 0, 11, 0), Err(ParamsError::NoUsers));
        assert_eq!(
            SystemParams::new(3, 2, 7, 11, 0),
            Err(ParamsError::TooManyColluders { t: 7, users: 6 })
        );
        assert!(matches!(SystemParams::new(3, 2, 0, 12, 0), Err(ParamsError::Field(_))));
        let p = SystemParams::new(3, 2, 6, 11, 0).unwrap();
        assert_eq!(p.source_key_length(), 5);
    }

    #[test]
    fn user_order_is_lexicographic() {
        let p = SystemParams::new(3, 2, 0, 11, 0).unwrap();
        let users: Vec<String> = p.users().map(|u| u.to_string()).collect();
        assert_eq!(users, ["(1,1)", "(1,2)", "(2,1)", "(2,2)", "(3,1)", "(3,2)"]);
        for (i, u) in p.users().enumerate() {
            assert_eq!(p.user_index(u), i);
        }
    }

    #[test]
    fn json_shape() {
        let p = SystemParams::new(3, 3, 2, 17, 9).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"U":3,"V":3,"T":2,"q":17,"seed":9}"#);
        let u = UserId::new(1, 0);
        assert_eq!(serde_json::to_string(&u).unwrap(), "[2,1]");
        assert_eq!(serde_json::from_str::<UserId>("[2,1]").unwrap(), u);
        assert!(serde_json::from_str::<UserId>("[0,1]").is_err());
    }
}
