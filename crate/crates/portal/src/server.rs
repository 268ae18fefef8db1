use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use sciflow_core::access::{Principal, Role};
use sciflow_core::bridge::{parse_registry, BackendDescriptor, Bridge, BridgeError, Launcher};
use sciflow_core::clock::{Clock, SystemClock};
use sciflow_core::engine::{Engine, EngineConfig, EngineError};
use sciflow_core::model::{export_archive, ArchiveItem};
use sciflow_core::repository::{ItemFilter, RepoError, RepoOptions, Repository};

use crate::auth::{Accounts, AuthError};
use crate::config::PortalConfig;
use crate::demo;
use crate::launcher::ToolkitLauncher;

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything the HTTP handlers and the background scheduler share.
pub struct Portal {
    pub engine: Arc<Engine>,
    pub accounts: Accounts,
    pub config: PortalConfig,
    pub clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Portal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Portal").field("config", &self.config).finish()
    }
}

impl Portal {
    pub fn open(config: PortalConfig) -> Result<Arc<Self>, StartError> {
        let launcher = Arc::new(ToolkitLauncher::new(&config.toolkit));
        Portal::open_with(config, Arc::new(SystemClock), launcher)
    }

    pub fn open_with(
        config: PortalConfig,
        clock: Arc<dyn Clock>,
        launcher: Arc<dyn Launcher>,
    ) -> Result<Arc<Self>, StartError> {
        std::fs::create_dir_all(&config.store_dir)?;
        let repo = Arc::new(Repository::open_with(
            &config.store_dir,
            RepoOptions { sync: config.fsync },
        )?);
        let bridge = Arc::new(Bridge::new(launcher));
        for b in &config.backends {
            bridge.register_backend(b.clone())?;
        }
        let added = config.store_dir.join("backends.json");
        if added.exists() {
            for b in parse_registry(&std::fs::read_to_string(&added)?)? {
                bridge.register_backend(b)?;
            }
        }
        let mut engine_config = EngineConfig::new(config.work_dir());
        engine_config.step_ms = config.step_ms;
        let engine = Arc::new(Engine::open(bridge, repo, clock.clone(), engine_config)?);
        let accounts = Accounts::open(
            Some(config.store_dir.join("users.json")),
            clock.clone(),
            config.token_ttl_s,
            config.password_iterations,
        )?;
        if let (true, Some(seed)) = (accounts.is_empty(), &config.admin) {
            accounts.create_user(&seed.username, &seed.password, Role::Admin, true)?;
            tracing::info!(user = %seed.username, "created admin account");
        }
        let portal = Portal {
            engine,
            accounts,
            config,
            clock,
        };
        if portal.config.seed_demo {
            portal.seed_demo()?;
        }
        Ok(Arc::new(portal))
    }

    /// Publishes the demo workflow and template under the first admin
    /// unless the repository already holds items.
    fn seed_demo(&self) -> Result<(), StartError> {
        let Some(admin) = self.accounts.list_users().into_iter().find(|u| u.role == Role::Admin) else {
            return Ok(());
        };
        let admin = Principal::new(admin.username, Role::Admin);
        let repo = self.engine.repository();
        if !repo.list_items(&admin, &ItemFilter::default())?.is_empty() {
            return Ok(());
        }
        let now = self.clock.now_ms();
        for item in [
            ArchiveItem::Workflow(demo::demo_workflow(&demo::DEFAULT_RATES)),
            ArchiveItem::Template(demo::demo_template()),
        ] {
            let meta = repo.put_item(&admin, None, export_archive(&item), now)?;
            repo.publish(&admin, &meta.id)?;
        }
        Ok(())
    }

    /// Registers a backend and remembers it across restarts.
    pub fn add_backend(&self, desc: BackendDescriptor) -> Result<String, StartError> {
        let bridge = self.engine.bridge();
        let id = bridge.register_backend(desc.clone())?;
        let path = self.config.store_dir.join("backends.json");
        let mut added: Vec<BackendDescriptor> = if path.exists() {
            parse_registry(&std::fs::read_to_string(&path)?)?
        } else {
            Vec::new()
        };
        added.push(desc);
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&added).expect("descriptors serialize"))?;
        std::fs::rename(tmp, path)?;
        Ok(id)
    }

    /// Runs scheduler passes until the task is dropped.
    pub fn spawn_scheduler(self: &Arc<Self>) -> tokio::task::JoinHandle<()> {
        let portal = self.clone();
        tokio::spawn(async move {
            let interval = Duration::from_millis(portal.config.tick_interval_ms.max(1));
            loop {
                tokio::time::sleep(interval).await;
                let engine = portal.engine.clone();
                match tokio::task::spawn_blocking(move || engine.tick_all()).await {
                    Ok(Ok(_)) => {}
                    Ok(Err(e)) => tracing::error!(error = %e, "scheduler pass failed"),
                    Err(e) => tracing::error!(error = %e, "scheduler pass panicked"),
                }
            }
        })
    }

    pub fn ui_dir(&self) -> Option<PathBuf> {
        self.config.ui_dir.clone().filter(|d| d.is_dir())
    }
}

/// Runs the scheduler and serves on `listener` until `shutdown` resolves.
pub async fn serve(
    portal: Arc<Portal>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let scheduler = portal.spawn_scheduler();
    let app = crate::api::router(portal);
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    scheduler.abort();
    result
}
