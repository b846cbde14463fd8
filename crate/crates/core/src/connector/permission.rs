use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::types::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Submit,
    Validate,
    Aggregate,
    CreateAsset,
    Join,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Submit, Role::Validate, Role::Aggregate, Role::CreateAsset, Role::Join];
}

/// Whitelist plus role matrix for a permissioned overlay.
#[derive(Debug, Clone, Default)]
pub struct PermissionRegistry {
    whitelist: BTreeSet<Address>,
    roles: BTreeMap<Address, BTreeSet<Role>>,
}

impl PermissionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn admit(&mut self, who: Address, roles: impl IntoIterator<Item = Role>) {
        self.whitelist.insert(who);
        self.roles.entry(who).or_default().extend(roles);
    }

    /// Removes `who` from the whitelist; its roles stop counting immediately.
    pub fn expel(&mut self, who: &Address) {
        self.whitelist.remove(who);
        self.roles.remove(who);
    }

    pub fn is_whitelisted(&self, who: &Address) -> bool {
        self.whitelist.contains(who)
    }

    pub fn check_permission(&self, who: &Address, action: Role) -> bool {
        self.whitelist.contains(who) && self.roles.get(who).is_some_and(|r| r.contains(&action))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitelisted_gateway_may_submit() {
        let mut reg = PermissionRegistry::new();
        let gw = Address::gateway(0);
        reg.admit(gw, Role::ALL);
        assert!(reg.check_permission(&gw, Role::Submit));
    }

    #[test]
    fn unknown_identity_is_denied_everything() {
        let reg = PermissionRegistry::new();
        for r in Role::ALL {
            assert!(!reg.check_permission(&Address::gateway(9), r));
        }
    }

    #[test]
    fn role_matrix_enumeration() {
        let mut reg = PermissionRegistry::new();
        // every subset of roles, one identity each
        for mask in 0u32..32 {
            let granted: Vec<Role> =
                Role::ALL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, r)| *r).collect();
            reg.admit(Address::gateway(mask as u64), granted);
        }
        for mask in 0u32..32 {
            for (i, r) in Role::ALL.iter().enumerate() {
                assert_eq!(reg.check_permission(&Address::gateway(mask as u64), *r), mask & (1 << i) != 0);
            }
        }
        let submit_only = Address::gateway(1);
        assert!(reg.check_permission(&submit_only, Role::Submit));
        assert!(!reg.check_permission(&submit_only, Role::Aggregate));
    }

    #[test]
    fn expelled_identity_loses_roles() {
        let mut reg = PermissionRegistry::new();
        let gw = Address::gateway(3);
        reg.admit(gw, [Role::Submit]);
        reg.expel(&gw);
        assert!(!reg.check_permission(&gw, Role::Submit));
    }
}
