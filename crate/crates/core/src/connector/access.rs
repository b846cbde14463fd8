use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::AccessError;
use crate::types::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Permission {
    Read,
    Write,
    Audit,
}

/// Per-resource grants. Owners may grant and revoke individual permissions;
/// owners hold every permission on their own resources.
#[derive(Debug, Clone, Default)]
pub struct AccessPolicy {
    owners: BTreeMap<String, Address>,
    grants: BTreeMap<Address, BTreeSet<(String, Permission)>>,
}

impl AccessPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `owner` for `resource` if nobody owns it yet.
    pub fn claim(&mut self, resource: &str, owner: Address) -> Result<(), AccessError> {
        match self.owners.get(resource) {
            Some(o) if *o != owner => Err(AccessError::NotOwner(resource.to_string())),
            _ => {
                self.owners.insert(resource.to_string(), owner);
                Ok(())
            }
        }
    }

    fn require_owner(&self, caller: &Address, resource: &str) -> Result<(), AccessError> {
        match self.owners.get(resource) {
            Some(o) if o == caller => Ok(()),
            _ => Err(AccessError::NotOwner(resource.to_string())),
        }
    }

    pub fn grant_access(
        &mut self,
        caller: &Address,
        who: Address,
        resource: &str,
        perm: Permission,
    ) -> Result<(), AccessError> {
        self.require_owner(caller, resource)?;
        self.grants.entry(who).or_default().insert((resource.to_string(), perm));
        Ok(())
    }

    pub fn revoke_access(
        &mut self,
        caller: &Address,
        who: &Address,
        resource: &str,
        perm: Permission,
    ) -> Result<(), AccessError> {
        self.require_owner(caller, resource)?;
        if let Some(set) = self.grants.get_mut(who) {
            set.remove(&(resource.to_string(), perm));
        }
        Ok(())
    }

    pub fn check(&self, who: &Address, resource: &str, perm: Permission) -> bool {
        self.owners.get(resource) == Some(who)
            || self.grants.get(who).is_some_and(|s| s.contains(&(resource.to_string(), perm)))
    }

    pub fn require(&self, who: &Address, resource: &str, perm: Permission) -> Result<(), AccessError> {
        if self.check(who, resource, perm) {
            Ok(())
        } else {
            Err(AccessError::AccessDenied)
        }
    }
}
