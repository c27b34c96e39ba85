//! Captured frames used as seeds, fixtures and benchmark inputs.

use super::DeployCommand;

/// The 282-byte script deployment frame `vpndownloader` sends to the agent.
pub const SCRIPT_DEPLOY_HEX: &str = concat!(
    "4f4353432600f400ffffffffffffffff0000000000000000020000000000000000000000",
    "0102000100282f6f70742f636973636f2f616e79636f6e6e6563742f62696e2f76706e64",
    "6f776e6c6f616465720000020094224341432d6d6f7665092d6970633d3337333139092f",
    "746d702f2e616348314a3333422f4f6e436f6e6e6563745f6c6974746c65092f6f70742f",
    "636973636f2f616e79636f6e6e6563742f7363726970742f4f6e436f6e6e6563745f6c69",
    "74746c650942344644333833364543383246314635423544333834374433413241364142",
    "37393032443534384209736861310931220080050001000600282f6f70742f636973636f",
    "2f616e79636f6e6e6563742f62696e2f76706e646f776e6c6f6164657200",
);

pub const VPNDOWNLOADER_PATH: &str = "/opt/cisco/anyconnect/bin/vpndownloader";

pub fn script_deploy_frame() -> Vec<u8> {
    hex::decode(SCRIPT_DEPLOY_HEX).expect("reference hex is valid")
}

/// The command carried in the second TLV of [`script_deploy_frame`].
pub fn script_deploy_command() -> DeployCommand {
    DeployCommand {
        command: "CAC-move".into(),
        reply_port: 37319,
        src_path: "/tmp/.acH1J33B/OnConnect_little".into(),
        dst_path: "/opt/cisco/anyconnect/script/OnConnect_little".into(),
        digest_hex: "B4FD3836EC82F1F5B5D3847D3A2A6AB7902D548B".into(),
        digest_algo: "sha1".into(),
        mode_flag: '1',
    }
}
